//! On-disk formats.
//!
//! A dataset directory holds `meta.json` and, per sample, `<id>.features.csv`
//! (`T` rows of `D` comma-separated floats) and `<id>.labels.csv` (`T` rows,
//! one class index each). Predicted sequences are JSON lines
//! `{"format_version", "id", "sequence"}`. Frame probabilities are CSV with a
//! header naming the class columns and an optional `boundary` column.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! reader returns exactly what was written.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmenter::FrameProbs;
use crate::sequence::{ActionSequence, ClassId, FeatureSequence, FrameLabeling, LabelVocab, LabeledSample};

pub const FORMAT_VERSION: u32 = 1;

pub fn check_version(found: u32, what: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Format(format!("{what}: unsupported format_version {found}")));
    }
    Ok(())
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            "all" => Err(Error::Config("use Splits::all for every sample".into())),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }

    /// Every id appears in exactly one split.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.all() {
            if !seen.insert(id) {
                return Err(Error::Format(format!("sample {id} listed twice in splits")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub classes: Vec<String>,
    pub feature_dim: usize,
    pub frame_rate: f64,
    pub splits: Splits,
    /// Sequence-group key per sample (e.g. subject).
    #[serde(default)]
    pub groups: BTreeMap<String, String>,
    /// Free-form provenance, such as the generator configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<serde_json::Value>,
}

impl DatasetMeta {
    pub fn vocab(&self) -> Result<LabelVocab> {
        LabelVocab::new(self.classes.iter().cloned())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: BTreeMap<String, LabeledSample>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<Vec<&LabeledSample>> {
        let ids: Vec<&String> = if name == "all" {
            self.meta.splits.all().collect()
        } else {
            self.meta.splits.get(name)?.iter().collect()
        };
        ids.into_iter()
            .map(|id| {
                self.samples
                    .get(id)
                    .ok_or_else(|| Error::Format(format!("sample {id} missing from dataset")))
            })
            .collect()
    }

    pub fn split_owned(&self, name: &str) -> Result<Vec<LabeledSample>> {
        Ok(self.split(name)?.into_iter().cloned().collect())
    }

    pub fn group_of(&self, id: &str) -> String {
        self.meta.groups.get(id).cloned().unwrap_or_else(|| id.to_string())
    }
}

fn sample_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.features.csv")), dir.join(format!("{id}.labels.csv")))
}

fn csv_writer() -> csv::WriterBuilder {
    let mut b = csv::WriterBuilder::new();
    b.has_headers(false);
    b
}

fn float_rows_to_csv<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<String> {
    let mut w = csv_writer().from_writer(Vec::new());
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn parse_float(s: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{}:{line}: not a number: {s:?}", path.display())))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("{}:{line}: non-finite value", path.display())));
    }
    Ok(v)
}

pub fn write_features_csv(path: impl AsRef<Path>, x: &FeatureSequence) -> Result<()> {
    write_text(path, &float_rows_to_csv(x.rows())?)
}

pub fn read_features_csv(path: impl AsRef<Path>, frame_rate: f64) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut dim = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if *dim.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Shape(format!("{}:{}: ragged row", path.display(), i + 1)));
        }
        for field in rec.iter() {
            data.push(parse_float(field, path, i + 1)?);
        }
    }
    FeatureSequence::new(data, dim.unwrap_or(0).max(1), frame_rate)
}

pub fn write_labels_csv(path: impl AsRef<Path>, labels: &[ClassId]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    write_text(path, &text)
}

/// One label token per row, as written (names or indices).
pub fn read_label_tokens(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = read_text(path.as_ref())?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            let rec = rec?;
            match rec.len() {
                1 => Ok(rec[0].trim().to_string()),
                n => Err(Error::Format(format!("label row with {n} fields"))),
            }
        })
        .collect()
}

pub fn read_labels_csv(path: impl AsRef<Path>, num_classes: usize) -> Result<Vec<ClassId>> {
    let path = path.as_ref();
    read_label_tokens(path)?
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let l: ClassId = tok
                .parse()
                .map_err(|_| Error::Format(format!("{}:{}: bad label {tok:?}", path.display(), i + 1)))?;
            if l >= num_classes {
                return Err(Error::Format(format!(
                    "{}:{}: label {l} outside {num_classes} classes",
                    path.display(),
                    i + 1
                )));
            }
            Ok(l)
        })
        .collect()
}

/// Writes a dataset directory. Samples not named in `splits` are rejected.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    classes: &[String],
    samples: &[LabeledSample],
    splits: Splits,
    source: Option<serde_json::Value>,
) -> Result<DatasetMeta> {
    let dir = dir.as_ref();
    splits.validate()?;
    let first = samples.first().ok_or_else(|| Error::Config("no samples to write".into()))?;
    let listed: BTreeSet<&String> = splits.all().collect();
    let present: BTreeSet<&String> = samples.iter().map(|s| &s.id).collect();
    if listed != present {
        return Err(Error::Config("splits must list every sample exactly once".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut groups = BTreeMap::new();
    for s in samples {
        s.frame_labels.check_classes(classes.len())?;
        if s.features.dim() != first.features.dim() {
            return Err(Error::Shape(format!("sample {} has a different feature dim", s.id)));
        }
        let (fp, lp) = sample_paths(dir, &s.id);
        write_features_csv(fp, &s.features)?;
        write_labels_csv(lp, &s.frame_labels.labels)?;
        if let Some(g) = s.features.metadata.get("group") {
            groups.insert(s.id.clone(), g.clone());
        }
    }
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        classes: classes.to_vec(),
        feature_dim: first.features.dim(),
        frame_rate: first.features.frame_rate,
        splits,
        groups,
        source,
    };
    write_json(dir.join("meta.json"), &meta)?;
    Ok(meta)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta: DatasetMeta = read_json(dir.join("meta.json"))?;
    check_version(meta.format_version, "meta.json")?;
    meta.splits.validate()?;
    let c = meta.classes.len();
    let mut samples = BTreeMap::new();
    for id in meta.splits.all() {
        let (fp, lp) = sample_paths(dir, id);
        let mut features = read_features_csv(&fp, meta.frame_rate)?;
        if features.dim() != meta.feature_dim {
            return Err(Error::Shape(format!(
                "{}: {} channels, meta says {}",
                fp.display(),
                features.dim(),
                meta.feature_dim
            )));
        }
        if let Some(g) = meta.groups.get(id) {
            features.metadata.insert("group".into(), g.clone());
        }
        let labels = FrameLabeling::new(read_labels_csv(&lp, c)?, meta.frame_rate)?;
        samples.insert(id.clone(), LabeledSample::new(id.clone(), features, labels)?);
    }
    Ok(Dataset { meta, samples })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub format_version: u32,
    pub id: String,
    pub sequence: ActionSequence,
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[(String, ActionSequence)]) -> Result<()> {
    let mut text = String::new();
    for (id, seq) in preds {
        let rec = PredictionRecord {
            format_version: FORMAT_VERSION,
            id: id.clone(),
            sequence: seq.clone(),
        };
        text.push_str(&serde_json::to_string(&rec)?);
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<(String, ActionSequence)>> {
    let path = path.as_ref();
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: PredictionRecord = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
            check_version(rec.format_version, "prediction record")?;
            Ok((rec.id, rec.sequence))
        })
        .collect()
}

pub fn frame_probs_to_csv(p: &FrameProbs, classes: &[String]) -> Result<String> {
    if classes.len() != p.num_classes() {
        return Err(Error::Shape(format!("{} names for {} classes", classes.len(), p.num_classes())));
    }
    let mut w = csv_writer().from_writer(Vec::new());
    let mut header: Vec<String> = classes.iter().map(|c| format!("p_{c}")).collect();
    if p.boundary().is_some() {
        header.push("boundary".into());
    }
    w.write_record(&header)?;
    for t in 0..p.len() {
        let mut row: Vec<String> = p.row(t).iter().map(|v| v.to_string()).collect();
        if let Some(b) = p.boundary() {
            row.push(b[t].to_string());
        }
        w.write_record(&row)?;
    }
    into_string(w)
}

pub fn write_frame_probs(path: impl AsRef<Path>, p: &FrameProbs, classes: &[String]) -> Result<()> {
    write_text(path, &frame_probs_to_csv(p, classes)?)
}

pub fn read_frame_probs(path: impl AsRef<Path>, frame_rate: f64) -> Result<FrameProbs> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let has_boundary = header.iter().last() == Some("boundary");
    let c = header.len() - usize::from(has_boundary);
    if c == 0 || header.iter().take(c).any(|h| !h.starts_with("p_")) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let mut probs = Vec::new();
    let mut boundary = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let v = parse_float(field, path, i + 2)?;
            if j < c {
                probs.push(v);
            } else {
                boundary.push(v);
            }
        }
    }
    FrameProbs::new(probs, c, has_boundary.then_some(boundary), frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorConfig};

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig::stroke_like(4);
        let mut cfg = cfg;
        cfg.length_range = (40, 60);
        let samples = generate(&cfg, 3).unwrap();
        let splits = Splits {
            train: vec!["s0000".into(), "s0002".into()],
            val: vec![],
            test: vec!["s0001".into()],
        };
        write_dataset(dir.path(), &cfg.class_names, &samples, splits.clone(), None).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.meta.splits, splits);
        for s in &samples {
            let back = &ds.samples[&s.id];
            assert_eq!(back.features.data(), s.features.data());
            assert_eq!(back.frame_labels, s.frame_labels);
            assert_eq!(ds.group_of(&s.id), s.features.metadata["group"]);
        }
        assert_eq!(ds.split("test").unwrap()[0].id, "s0001");
        assert!(ds.split("bogus").is_err());

        let bad = Splits {
            train: vec!["s0000".into()],
            val: vec!["s0000".into()],
            test: vec![],
        };
        assert!(write_dataset(dir.path(), &cfg.class_names, &samples[..1], bad, None).is_err());
    }

    #[test]
    fn reader_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.labels.csv");
        write_text(&p, "0\n7\n").unwrap();
        assert!(read_labels_csv(&p, 3).is_err());
        write_text(&p, "1,2\n3\n").unwrap();
        assert!(read_features_csv(&p, 10.0).is_err());
        write_text(&p, "1,nan\n").unwrap();
        assert!(read_features_csv(&p, 10.0).is_err());
        let e = read_text(dir.path().join("missing")).unwrap_err();
        assert_eq!(e.category(), crate::error::Category::Format);
        write_text(dir.path().join("meta.json"), r#"{"format_version": 2, "classes": [], "feature_dim": 1, "frame_rate": 1.0, "splits": {"train": [], "val": [], "test": []}}"#).unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }

    #[test]
    fn predictions_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        let preds = vec![
            ("a".to_string(), ActionSequence::from_vec(vec![0, 2, 1])),
            ("b".to_string(), ActionSequence::empty()),
        ];
        write_predictions(&p, &preds).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), preds);
        write_text(&p, "{\"format_version\":3,\"id\":\"a\",\"sequence\":[]}\n").unwrap();
        assert!(read_predictions(&p).is_err());
    }

    #[test]
    fn frame_probs_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let names = vec!["a".to_string(), "b".to_string()];
        let third = 1.0 / 3.0;
        for b in [None, Some(vec![0.1, 0.9])] {
            let p = FrameProbs::new(vec![third, 1.0 - third, 0.25, 0.75], 2, b, 25.0).unwrap();
            write_frame_probs(&path, &p, &names).unwrap();
            assert_eq!(read_frame_probs(&path, 25.0).unwrap(), p);
        }
    }
}
