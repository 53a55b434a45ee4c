//! Python bindings. Sequences are lists of class indices, feature
//! sequences are lists of rows, and structured results (reports, logs)
//! come back as plain dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde_json::Value;

use actseq_core::datagen::{generate as generate_samples, normalize_per_sample, GeneratorConfig};
use actseq_core::harness::{run_plan as run, write_run, ExperimentPlan};
use actseq_core::io::{read_text, write_text};
use actseq_core::metrics::{self, tpr_fdr_f1};
use actseq_core::numerics::Checkpoint;
use actseq_core::segmenter::{self, SegmenterConfig};
use actseq_core::seq2seq::{self, windowed_infer, Seq2SeqConfig};
use actseq_core::sequence::{collapse_labels, ActionSequence, FeatureSequence, FrameLabeling, LabeledSample};
use actseq_core::training::{TrainConfig, TrainingLog};
use actseq_core::Error;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.category()))
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("config: {e}"))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(json_err)?;
    py.import("json")?.call_method1("loads", (s,))
}

fn parse<T: serde::de::DeserializeOwned + Default>(s: Option<&str>) -> PyResult<T> {
    s.map_or_else(|| Ok(T::default()), |s| serde_json::from_str(s).map_err(json_err))
}

fn features(rows: Vec<Vec<f64>>, frame_rate: f64) -> PyResult<FeatureSequence> {
    FeatureSequence::from_rows(&rows, frame_rate).map_err(err)
}

fn rows(x: &FeatureSequence) -> Vec<Vec<f64>> {
    x.rows().map(|r| r.to_vec()).collect()
}

fn inner(samples: &[PyRef<'_, Sample>]) -> Vec<LabeledSample> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

/// A labeled multichannel sequence.
#[pyclass(module = "actseq", frozen)]
struct Sample {
    inner: LabeledSample,
}

#[pymethods]
impl Sample {
    #[new]
    #[pyo3(signature = (id, features, labels, frame_rate = 100.0))]
    fn new(id: String, features: Vec<Vec<f64>>, labels: Vec<usize>, frame_rate: f64) -> PyResult<Self> {
        let x = self::features(features, frame_rate)?;
        let f = FrameLabeling::new(labels, frame_rate).map_err(err)?;
        Ok(Self {
            inner: LabeledSample::new(id, x, f).map_err(err)?,
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.features)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.frame_labels.labels.clone()
    }

    #[getter]
    fn sequence(&self) -> Vec<usize> {
        self.inner.sequence().items().to_vec()
    }

    #[getter]
    fn group(&self) -> Option<String> {
        self.inner.features.metadata.get("group").cloned()
    }

    /// Copy with every channel standardized to zero mean and unit variance.
    fn normalized(&self) -> PyResult<Self> {
        let x = normalize_per_sample(&self.inner.features).map_err(err)?;
        Ok(Self {
            inner: LabeledSample::new(self.inner.id.clone(), x, self.inner.frame_labels.clone()).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Sample(id={:?}, frames={}, actions={})", self.inner.id, self.inner.len(), self.inner.sequence().len())
    }
}

/// Multi-stage temporal convolutional frame classifier.
#[pyclass(module = "actseq", frozen)]
struct Segmenter {
    inner: segmenter::Segmenter,
    log: Option<TrainingLog>,
}

#[pymethods]
impl Segmenter {
    /// Untrained model; `config` is a JSON object of segmenter settings.
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg: SegmenterConfig = parse(config)?;
        Ok(Self {
            inner: segmenter::Segmenter::new(cfg, seed).map_err(err)?,
            log: None,
        })
    }

    /// Trains on `train`, keeping the epoch with the lowest validation AER.
    /// Input and class counts are taken from the data.
    #[staticmethod]
    #[pyo3(signature = (train, val, num_classes, config = None, train_config = None, seed = 0))]
    fn train(
        train: Vec<PyRef<'_, Sample>>,
        val: Vec<PyRef<'_, Sample>>,
        num_classes: usize,
        config: Option<&str>,
        train_config: Option<&str>,
        seed: u64,
    ) -> PyResult<Self> {
        let mut cfg: SegmenterConfig = parse(config)?;
        let tc: TrainConfig = parse(train_config)?;
        let tr = inner(&train);
        cfg.input_dim = tr.first().map_or(cfg.input_dim, |s| s.features.dim());
        cfg.num_classes = num_classes;
        let t = segmenter::train_segmenter(&tr, &inner(&val), cfg, &tc, seed).map_err(err)?;
        Ok(Self {
            inner: t.model,
            log: Some(t.log),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::from_json(&read_text(path).map_err(err)?).map_err(err)?;
        Ok(Self {
            inner: segmenter::Segmenter::from_checkpoint(&ck).map_err(err)?,
            log: None,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_text(path, &self.inner.to_checkpoint().to_json().map_err(err)?).map_err(err)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Training log of a model returned by `train`.
    #[getter]
    fn log<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.log.as_ref().map(|l| to_py(py, l)).transpose()
    }

    /// Per-frame class probabilities and, with a boundary head, boundary
    /// probabilities: `(probs, boundary)`.
    #[pyo3(signature = (features, frame_rate = 100.0))]
    fn predict(&self, features: Vec<Vec<f64>>, frame_rate: f64) -> PyResult<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
        let p = self.inner.predict(&self::features(features, frame_rate)?).map_err(err)?;
        let probs = (0..p.len()).map(|t| p.row(t).to_vec()).collect();
        Ok((probs, p.boundary().map(|b| b.to_vec())))
    }

    /// Frame labels after `refine` ("none", "smoothing" or "boundary").
    #[pyo3(signature = (features, refine = "none", frame_rate = 100.0))]
    fn predict_labels(&self, features: Vec<Vec<f64>>, refine: &str, frame_rate: f64) -> PyResult<Vec<usize>> {
        let r = self.inner.config.refinement(refine).map_err(err)?;
        let p = self.inner.predict(&self::features(features, frame_rate)?).map_err(err)?;
        Ok(r.apply(&p).map_err(err)?.labels)
    }

    /// Collapsed action sequence of the refined frame labels.
    #[pyo3(signature = (features, refine = "none", frame_rate = 100.0))]
    fn predict_sequence(&self, features: Vec<Vec<f64>>, refine: &str, frame_rate: f64) -> PyResult<Vec<usize>> {
        let labels = self.predict_labels(features, refine, frame_rate)?;
        Ok(collapse_labels(&labels).into_vec())
    }
}

/// Encoder-decoder that maps a feature sequence directly to actions.
#[pyclass(module = "actseq", frozen)]
struct Seq2Seq {
    inner: seq2seq::Seq2Seq,
    log: Option<TrainingLog>,
}

#[pymethods]
impl Seq2Seq {
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg: Seq2SeqConfig = parse(config)?;
        Ok(Self {
            inner: seq2seq::Seq2Seq::new(cfg, seed).map_err(err)?,
            log: None,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (train, val, num_classes, config = None, train_config = None, seed = 0))]
    fn train(
        train: Vec<PyRef<'_, Sample>>,
        val: Vec<PyRef<'_, Sample>>,
        num_classes: usize,
        config: Option<&str>,
        train_config: Option<&str>,
        seed: u64,
    ) -> PyResult<Self> {
        let mut cfg: Seq2SeqConfig = parse(config)?;
        let tc: TrainConfig = parse(train_config)?;
        let tr = inner(&train);
        cfg.input_dim = tr.first().map_or(cfg.input_dim, |s| s.features.dim());
        cfg.num_classes = num_classes;
        let t = seq2seq::train_seq2seq(&tr, &inner(&val), cfg, &tc, seed).map_err(err)?;
        Ok(Self {
            inner: t.model,
            log: Some(t.log),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::from_json(&read_text(path).map_err(err)?).map_err(err)?;
        Ok(Self {
            inner: seq2seq::Seq2Seq::from_checkpoint(&ck).map_err(err)?,
            log: None,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_text(path, &self.inner.to_checkpoint().to_json().map_err(err)?).map_err(err)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    #[getter]
    fn log<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.log.as_ref().map(|l| to_py(py, l)).transpose()
    }

    /// Action sequence decoded window by window and stitched.
    #[pyo3(signature = (features, frame_rate = 100.0))]
    fn predict(&self, features: Vec<Vec<f64>>, frame_rate: f64) -> PyResult<Vec<usize>> {
        let x = self::features(features, frame_rate)?;
        Ok(windowed_infer(&self.inner, &x).map_err(err)?.into_vec())
    }
}

fn s(v: Vec<usize>) -> ActionSequence {
    ActionSequence::from_vec(v)
}

#[pyfunction]
fn levenshtein(g: Vec<usize>, p: Vec<usize>) -> usize {
    metrics::levenshtein(&s(g), &s(p))
}

/// 0-100 scale.
#[pyfunction]
fn edit_score(g: Vec<usize>, p: Vec<usize>) -> f64 {
    metrics::edit_score(&s(g), &s(p))
}

#[pyfunction]
fn aer(g: Vec<usize>, p: Vec<usize>) -> PyResult<f64> {
    metrics::aer(&s(g), &s(p)).map_err(err)
}

/// Counts of correct, substituted, missed and spurious actions.
#[pyfunction]
fn align<'py>(py: Python<'py>, g: Vec<usize>, p: Vec<usize>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::align(&s(g), &s(p)))
}

/// `(tpr, fdr, f1)` of the alignment.
#[pyfunction]
fn detection_rates(g: Vec<usize>, p: Vec<usize>) -> PyResult<(f64, f64, f64)> {
    let r = tpr_fdr_f1(&metrics::align(&s(g), &s(p))).map_err(err)?;
    Ok((r.tpr, r.fdr, r.f1))
}

#[pyfunction]
fn collapse(labels: Vec<usize>) -> Vec<usize> {
    collapse_labels(&labels).into_vec()
}

/// Joins per-window sequences, dropping a repeated action at each junction.
#[pyfunction]
fn stitch(parts: Vec<Vec<usize>>) -> Vec<usize> {
    let parts: Vec<ActionSequence> = parts.into_iter().map(s).collect();
    seq2seq::stitch(&parts).into_vec()
}

/// Metric report over `(ground_truth, prediction)` pairs with bootstrap
/// confidence intervals.
#[pyfunction]
#[pyo3(signature = (pairs, num_classes, replicates = 1000, seed = 0))]
fn evaluate<'py>(
    py: Python<'py>,
    pairs: Vec<(Vec<usize>, Vec<usize>)>,
    num_classes: usize,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let pairs: Vec<_> = pairs.into_iter().map(|(g, p)| (s(g), s(p))).collect();
    to_py(py, &metrics::evaluate(&pairs, None, num_classes, replicates, seed).map_err(err)?)
}

/// Synthetic labeled sequences from a named profile or a JSON generator
/// config (which takes precedence).
#[pyfunction]
#[pyo3(signature = (n, profile = "stroke-like", seed = 0, config = None))]
fn generate(n: usize, profile: &str, seed: u64, config: Option<&str>) -> PyResult<Vec<Sample>> {
    let cfg = match config {
        Some(c) => serde_json::from_str(c).map_err(json_err)?,
        None => GeneratorConfig::profile(profile, seed).map_err(err)?,
    };
    Ok(generate_samples(&cfg, n)
        .map_err(err)?
        .into_iter()
        .map(|inner| Sample { inner })
        .collect())
}

#[pyfunction]
fn class_names(profile: &str) -> PyResult<Vec<String>> {
    Ok(GeneratorConfig::profile(profile, 0).map_err(err)?.class_names)
}

/// Runs an experiment plan (JSON) and returns the test metrics per system.
/// With `out`, the full run directory is written there as well.
#[pyfunction]
#[pyo3(signature = (plan = None, out = None))]
fn run_plan<'py>(py: Python<'py>, plan: Option<&str>, out: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let plan: ExperimentPlan = parse(plan)?;
    let result = py.detach(|| run(&plan)).map_err(err)?;
    if let Some(dir) = out {
        write_run(dir, &result).map_err(err)?;
    }
    let systems: serde_json::Map<String, Value> = result
        .systems
        .iter()
        .map(|r| Ok((r.system.name().to_string(), serde_json::to_value(&r.report).map_err(json_err)?)))
        .collect::<PyResult<_>>()?;
    to_py(py, &systems)
}

#[pymodule]
mod actseq {
    #[pymodule_export]
    use super::{Sample, Segmenter, Seq2Seq};

    #[pymodule_export]
    use super::{aer, align, collapse, detection_rates, edit_score, evaluate, levenshtein, stitch};

    #[pymodule_export]
    use super::{class_names, generate, run_plan};
}
