use std::collections::BTreeMap;

use super::counts::{count_report, CountReport};
use super::{fold_assignment, split_by_group, DataSource, ExperimentPlan, SplitPolicy, SystemKind};
use crate::datagen::{generate, normalize_per_sample, GeneratorConfig};
use crate::error::{Error, Result};
use crate::io::{read_dataset, Splits};
use crate::metrics::{
    aer, boundary_accuracy_by_duration, confusion_counts, evaluate, DurationBucketReport, MetricReport,
};
use crate::numerics::rng::derive_seed;
use crate::numerics::Checkpoint;
use crate::segmenter::{boundary_refine, smooth_refine, train_segmenter, FrameProbs, Segmenter};
use crate::seq2seq::{train_seq2seq, windowed_infer_ensemble, InputKind, Seq2Seq, Seq2SeqConfig};
use crate::sequence::{
    boundaries_of_labels, collapse, ActionSequence, ClassId, FeatureSequence, FrameLabeling, LabeledSample,
};
use crate::training::{TrainConfig, TrainingLog};

pub struct SystemRun {
    pub system: SystemKind,
    pub report: MetricReport,
    pub counts: CountReport,
    /// Alignment confusion counts, truth by prediction.
    pub confusion: Vec<Vec<usize>>,
    /// Start-boundary detection by duration, for segmentation systems.
    pub boundary: Option<DurationBucketReport>,
    /// Test-split predictions in split order.
    pub predictions: Vec<(String, ActionSequence)>,
    pub training: Vec<TrainingLog>,
    /// `(file name, checkpoint)` pairs that reproduce the predictions.
    pub checkpoints: Vec<(String, Checkpoint)>,
    /// Values picked on the validation split by the sweeps.
    pub selected: BTreeMap<String, f64>,
}

pub struct RunOutput {
    /// The plan with data source, split and model dimensions filled in.
    pub plan: ExperimentPlan,
    pub classes: Vec<String>,
    pub splits: Splits,
    pub groups: BTreeMap<String, String>,
    pub systems: Vec<SystemRun>,
}

impl RunOutput {
    pub fn system(&self, kind: SystemKind) -> Option<&SystemRun> {
        self.systems.iter().find(|s| s.system == kind)
    }
}

struct Data {
    classes: Vec<String>,
    samples: BTreeMap<String, LabeledSample>,
    groups: BTreeMap<String, String>,
    stored: Option<Splits>,
}

fn load(plan: &mut ExperimentPlan) -> Result<Data> {
    let seed = plan.seed;
    let mut data = match &mut plan.data {
        DataSource::Dataset { path } => {
            let ds = read_dataset(path.as_path())?;
            let groups = ds.meta.splits.all().map(|id| (id.clone(), ds.group_of(id))).collect();
            Data {
                classes: ds.meta.classes.clone(),
                samples: ds.samples,
                groups,
                stored: Some(ds.meta.splits),
            }
        }
        DataSource::Generator { profile, config, n } => {
            let cfg = match (config.take(), profile.as_deref()) {
                (Some(c), _) => c,
                (None, Some(p)) => GeneratorConfig::profile(p, seed)?,
                (None, None) => GeneratorConfig::stroke_like(seed),
            };
            let samples = generate(&cfg, *n)?;
            let groups = samples
                .iter()
                .map(|s| {
                    let g = s.features.metadata.get("group").cloned().unwrap_or_else(|| s.id.clone());
                    (s.id.clone(), g)
                })
                .collect();
            let classes = cfg.class_names.clone();
            *config = Some(cfg);
            Data {
                classes,
                samples: samples.into_iter().map(|s| (s.id.clone(), s)).collect(),
                groups,
                stored: None,
            }
        }
    };
    if plan.normalize {
        for s in data.samples.values_mut() {
            *s = with_features(s, normalize_per_sample(&s.features)?)?;
        }
    }
    Ok(data)
}

fn with_features(s: &LabeledSample, x: FeatureSequence) -> Result<LabeledSample> {
    LabeledSample::new(s.id.clone(), x, s.frame_labels.clone())
}

fn resolve_splits(plan: &ExperimentPlan, data: &Data) -> Result<Splits> {
    let splits = match &plan.split {
        SplitPolicy::ByGroup { train, val, test } => split_by_group(&data.groups, [*train, *val, *test], plan.seed)?,
        SplitPolicy::Stored => data
            .stored
            .clone()
            .ok_or_else(|| Error::Config("generated data has no stored splits".into()))?,
        SplitPolicy::Explicit { splits } => splits.clone(),
    };
    splits.validate()?;
    if let Some(id) = splits.all().find(|id| !data.samples.contains_key(*id)) {
        return Err(Error::Config(format!("split lists unknown sample {id}")));
    }
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(Error::Config("train and test splits must be non-empty".into()));
    }
    Ok(splits)
}

fn resolve_models(plan: &mut ExperimentPlan, c: usize, d: usize) -> Result<()> {
    plan.segmenter.input_dim = d;
    plan.segmenter.num_classes = c;
    plan.raw2seq.input_kind = InputKind::Raw;
    plan.raw2seq.input_dim = d;
    plan.raw2seq.num_classes = c;
    plan.seg2seq.input_kind = InputKind::Probs;
    plan.seg2seq.input_dim = c + usize::from(plan.seg2seq.include_boundary);
    plan.seg2seq.num_classes = c;
    if plan.seg2seq.include_boundary && !plan.segmenter.boundary_head {
        return Err(Error::Config("seg2seq include_boundary needs a segmenter boundary head".into()));
    }
    let uses = |k: SystemKind| plan.systems.contains(&k);
    if plan.systems.iter().any(|k| k.needs_segmenter()) {
        plan.segmenter.validate()?;
    }
    if uses(SystemKind::Raw2seq) {
        plan.raw2seq.validate()?;
    }
    if uses(SystemKind::Seg2seq) {
        plan.seg2seq.validate()?;
    }
    Ok(())
}

/// `(train, val)` per model: the plain split, or one pair per fold of the
/// pooled train and validation groups.
fn partitions(
    plan: &ExperimentPlan,
    data: &Data,
    splits: &Splits,
) -> Result<Vec<(Vec<LabeledSample>, Vec<LabeledSample>)>> {
    let take = |ids: &[String]| ids.iter().map(|id| data.samples[id].clone()).collect::<Vec<_>>();
    let Some(k) = plan.folds else {
        return Ok(vec![(take(&splits.train), take(&splits.val))]);
    };
    let pool: BTreeMap<String, String> = splits
        .train
        .iter()
        .chain(&splits.val)
        .map(|id| (id.clone(), data.groups[id].clone()))
        .collect();
    let folds = fold_assignment(&pool, k, plan.seed)?;
    Ok((0..k)
        .map(|i| {
            let train: Vec<String> = folds.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, f)| f.clone()).collect();
            (take(&train), take(&folds[i]))
        })
        .collect())
}

fn ensemble_probs(models: &[Segmenter], x: &FeatureSequence) -> Result<FrameProbs> {
    if let [m] = models {
        return m.predict(x);
    }
    let preds = models.iter().map(|m| m.predict(x)).collect::<Result<Vec<_>>>()?;
    let k = preds.len() as f64;
    let mut probs = vec![0.0; preds[0].data().len()];
    let mut boundary = preds[0].boundary().map(|b| vec![0.0; b.len()]);
    for p in &preds {
        probs.iter_mut().zip(p.data()).for_each(|(a, v)| *a += v / k);
        if let (Some(acc), Some(b)) = (boundary.as_mut(), p.boundary()) {
            acc.iter_mut().zip(b).for_each(|(a, v)| *a += v / k);
        }
    }
    FrameProbs::new(probs, preds[0].num_classes(), boundary, x.frame_rate)
}

fn fold_name(base: &str, i: usize, k: usize) -> String {
    if k == 1 {
        format!("{base}.json")
    } else {
        format!("{base}.fold{i}.json")
    }
}

struct SegmenterSet {
    models: Vec<Segmenter>,
    logs: Vec<TrainingLog>,
}

impl SegmenterSet {
    fn checkpoints(&self, base: &str) -> Vec<(String, Checkpoint)> {
        let k = self.models.len();
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| (fold_name(base, i, k), m.to_checkpoint()))
            .collect()
    }
}

/// Picks the candidate with the lowest mean AER on `val`; ties keep the
/// earlier candidate.
fn sweep<T: Copy>(
    candidates: &[T],
    val: &[(&LabeledSample, &FrameProbs)],
    refine: impl Fn(&FrameProbs, T) -> Result<FrameLabeling>,
) -> Result<T> {
    let mut best = (candidates[0], f64::INFINITY);
    for &cand in candidates {
        let mut total = 0.0;
        for (s, p) in val {
            total += aer(s.sequence(), &collapse(&refine(p, cand)?))?;
        }
        let mean = total / val.len().max(1) as f64;
        if mean < best.1 {
            best = (cand, mean);
        }
    }
    Ok(best.0)
}

struct Outcome {
    sequences: Vec<ActionSequence>,
    frames: Option<Vec<Vec<ClassId>>>,
}

fn score(
    kind: SystemKind,
    plan: &ExperimentPlan,
    classes: &[String],
    test: &[&LabeledSample],
    groups: &[String],
    outcome: Outcome,
) -> Result<(MetricReport, CountReport, Vec<Vec<usize>>, Option<DurationBucketReport>, Vec<(String, ActionSequence)>)> {
    let c = classes.len();
    let pairs: Vec<(ActionSequence, ActionSequence)> = test
        .iter()
        .zip(&outcome.sequences)
        .map(|(s, p)| (s.sequence().clone(), p.clone()))
        .collect();
    let frame_pairs: Option<Vec<(Vec<ClassId>, Vec<ClassId>)>> = outcome.frames.as_ref().map(|f| {
        test.iter()
            .zip(f)
            .map(|(s, p)| (s.frame_labels.labels.clone(), p.clone()))
            .collect()
    });
    let report = evaluate(
        &pairs,
        frame_pairs.as_deref(),
        c,
        plan.bootstrap_replicates,
        derive_seed(plan.seed, 100 + kind as u64),
    )?;
    let gt: Vec<ActionSequence> = pairs.iter().map(|p| p.0.clone()).collect();
    let counts = count_report(&gt, &outcome.sequences, groups, classes)?;
    let confusion = confusion_counts(&pairs, c);
    let boundary = match (&outcome.frames, kind.is_segmentation()) {
        (Some(frames), true) => {
            let mut total = DurationBucketReport::empty(&plan.duration_edges);
            for (s, f) in test.iter().zip(frames) {
                total.merge(&boundary_accuracy_by_duration(
                    &s.frame_labels,
                    &boundaries_of_labels(f),
                    &plan.duration_edges,
                    plan.boundary_tolerance,
                ));
            }
            Some(total)
        }
        _ => None,
    };
    let predictions = test.iter().map(|s| s.id.clone()).zip(outcome.sequences).collect();
    Ok((report, counts, confusion, boundary, predictions))
}

fn train_seq2seq_set(
    parts: &[(Vec<LabeledSample>, Vec<LabeledSample>)],
    config: &Seq2SeqConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    stream: u64,
) -> Result<(Vec<Seq2Seq>, Vec<TrainingLog>)> {
    let mut models = Vec::new();
    let mut logs = Vec::new();
    for (i, (train, val)) in parts.iter().enumerate() {
        let t = train_seq2seq(train, val, config.clone(), train_cfg, derive_seed(seed, stream + i as u64))?;
        models.push(t.model);
        logs.push(t.log);
    }
    Ok((models, logs))
}

/// Trains and evaluates every system of the plan. Deterministic in the
/// plan seed; systems run one after another.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RunOutput> {
    plan.validate()?;
    let mut plan = plan.clone();
    let data = load(&mut plan)?;
    let splits = resolve_splits(&plan, &data)?;
    let first = &data.samples[&splits.train[0]];
    resolve_models(&mut plan, data.classes.len(), first.features.dim())?;
    let classes = data.classes.clone();

    let test: Vec<&LabeledSample> = splits.test.iter().map(|id| &data.samples[id]).collect();
    let test_groups: Vec<String> = splits.test.iter().map(|id| data.groups[id].clone()).collect();
    let val_ids = if splits.val.is_empty() { &splits.train } else { &splits.val };
    let val: Vec<&LabeledSample> = val_ids.iter().map(|id| &data.samples[id]).collect();
    let parts = partitions(&plan, &data, &splits)?;

    let segmenters = if plan.systems.iter().any(|k| k.needs_segmenter()) {
        let mut set = SegmenterSet {
            models: Vec::new(),
            logs: Vec::new(),
        };
        for (i, (train, v)) in parts.iter().enumerate() {
            let t = train_segmenter(
                train,
                v,
                plan.segmenter.clone(),
                &plan.segmenter_train,
                derive_seed(plan.seed, 10 + i as u64),
            )?;
            set.models.push(t.model);
            set.logs.push(t.log);
        }
        Some(set)
    } else {
        None
    };
    let probs = |samples: &[&LabeledSample]| -> Result<Vec<FrameProbs>> {
        let set = segmenters.as_ref().expect("segmenter trained");
        samples.iter().map(|s| ensemble_probs(&set.models, &s.features)).collect()
    };
    let (test_probs, val_probs) = match segmenters {
        Some(_) => (probs(&test)?, probs(&val)?),
        None => (Vec::new(), Vec::new()),
    };
    let val_pairs: Vec<(&LabeledSample, &FrameProbs)> = val.iter().copied().zip(&val_probs).collect();

    let mut systems = Vec::new();
    for &kind in &plan.systems {
        let mut training = Vec::new();
        let mut checkpoints = Vec::new();
        let mut selected = BTreeMap::new();
        let frames_of = |labels: Vec<FrameLabeling>| Outcome {
            sequences: labels.iter().map(collapse).collect(),
            frames: Some(labels.into_iter().map(|f| f.labels).collect()),
        };
        if kind.needs_segmenter() {
            let set = segmenters.as_ref().expect("segmenter trained");
            training.extend(set.logs.iter().cloned());
            let base = if kind == SystemKind::Seg2seq { "segmenter" } else { "checkpoint" };
            checkpoints.extend(set.checkpoints(base));
        }
        let outcome = match kind {
            SystemKind::Oracle => Outcome {
                sequences: test.iter().map(|s| s.sequence().clone()).collect(),
                frames: Some(test.iter().map(|s| s.frame_labels.labels.clone()).collect()),
            },
            SystemKind::Empty => Outcome {
                sequences: vec![ActionSequence::empty(); test.len()],
                frames: None,
            },
            SystemKind::Baseline => frames_of(test_probs.iter().map(FrameProbs::argmax_labels).collect()),
            SystemKind::Smoothing => {
                let cands = if plan.smoothing_windows.is_empty() {
                    vec![plan.segmenter.smoothing_window]
                } else {
                    plan.smoothing_windows.clone()
                };
                let w = sweep(&cands, &val_pairs, |p, w| smooth_refine(p, w))?;
                selected.insert("smoothing_window".into(), w as f64);
                frames_of(test_probs.iter().map(|p| smooth_refine(p, w)).collect::<Result<_>>()?)
            }
            SystemKind::Boundary => {
                let cands = if plan.boundary_thresholds.is_empty() {
                    vec![plan.segmenter.boundary_threshold]
                } else {
                    plan.boundary_thresholds.clone()
                };
                let nms = plan.segmenter.nms_radius;
                let th = sweep(&cands, &val_pairs, |p, th| boundary_refine(p, th, nms))?;
                selected.insert("boundary_threshold".into(), th);
                frames_of(test_probs.iter().map(|p| boundary_refine(p, th, nms)).collect::<Result<_>>()?)
            }
            SystemKind::Raw2seq => {
                let (models, logs) =
                    train_seq2seq_set(&parts, &plan.raw2seq, &plan.seq2seq_train, plan.seed, 20)?;
                let refs: Vec<&Seq2Seq> = models.iter().collect();
                let sequences = test
                    .iter()
                    .map(|s| windowed_infer_ensemble(&refs, &s.features))
                    .collect::<Result<_>>()?;
                training.extend(logs);
                let k = models.len();
                checkpoints.extend(models.iter().enumerate().map(|(i, m)| (fold_name("checkpoint", i, k), m.to_checkpoint())));
                Outcome { sequences, frames: None }
            }
            SystemKind::Seg2seq => {
                let set = segmenters.as_ref().expect("segmenter trained");
                let with_b = plan.seg2seq.include_boundary;
                let as_probs = |m: &Segmenter, v: &[LabeledSample]| -> Result<Vec<LabeledSample>> {
                    v.iter()
                        .map(|s| with_features(s, m.predict(&s.features)?.to_features(with_b)?))
                        .collect()
                };
                let prob_parts = parts
                    .iter()
                    .zip(&set.models)
                    .map(|((tr, va), m)| Ok((as_probs(m, tr)?, as_probs(m, va)?)))
                    .collect::<Result<Vec<_>>>()?;
                let (models, logs) =
                    train_seq2seq_set(&prob_parts, &plan.seg2seq, &plan.seq2seq_train, plan.seed, 30)?;
                let refs: Vec<&Seq2Seq> = models.iter().collect();
                let sequences = test_probs
                    .iter()
                    .map(|p| windowed_infer_ensemble(&refs, &p.to_features(with_b)?))
                    .collect::<Result<_>>()?;
                training.extend(logs);
                let k = models.len();
                checkpoints.extend(models.iter().enumerate().map(|(i, m)| (fold_name("checkpoint", i, k), m.to_checkpoint())));
                Outcome { sequences, frames: None }
            }
        };
        let (report, counts, confusion, boundary, predictions) =
            score(kind, &plan, &classes, &test, &test_groups, outcome)?;
        systems.push(SystemRun {
            system: kind,
            report,
            counts,
            confusion,
            boundary,
            predictions,
            training,
            checkpoints,
            selected,
        });
    }
    Ok(RunOutput {
        plan,
        classes,
        splits,
        groups: data.groups,
        systems,
    })
}
