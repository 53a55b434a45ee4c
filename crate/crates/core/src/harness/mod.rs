//! Experiment orchestration: a plan names the data, the split policy, the
//! systems to compare and their configurations; [`run_plan`] trains and
//! evaluates every system on the held-out test split and [`write_run`]
//! lays the results out in a run directory.

mod artifacts;
mod counts;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use artifacts::{write_run, CONFUSION_COLUMNS, BOUNDARY_COLUMNS};
pub use counts::{count_report, CountReport, CountRow, COUNT_COLUMNS};
pub use run::{run_plan, RunOutput, SystemRun};

use crate::datagen::{GeneratorConfig, STROKE_LIKE};
use crate::error::{Error, Result};
use crate::io::{Splits, FORMAT_VERSION};
use crate::metrics::default_duration_edges;
use crate::numerics::rng;
use crate::segmenter::SegmenterConfig;
use crate::seq2seq::{EncoderKind, InputKind, Seq2SeqConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    /// Segmenter argmax, collapsed.
    Baseline,
    /// Segmenter with boundary refinement.
    Boundary,
    /// Segmenter with smoothing refinement.
    Smoothing,
    /// Encoder-decoder over the segmenter's frame probabilities.
    Seg2seq,
    /// Encoder-decoder over the raw features.
    Raw2seq,
    /// Predicts the ground truth.
    Oracle,
    /// Predicts the empty sequence.
    Empty,
}

impl SystemKind {
    pub const ALL: [SystemKind; 7] = [
        SystemKind::Baseline,
        SystemKind::Boundary,
        SystemKind::Smoothing,
        SystemKind::Seg2seq,
        SystemKind::Raw2seq,
        SystemKind::Oracle,
        SystemKind::Empty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Baseline => "baseline",
            SystemKind::Boundary => "boundary",
            SystemKind::Smoothing => "smoothing",
            SystemKind::Seg2seq => "seg2seq",
            SystemKind::Raw2seq => "raw2seq",
            SystemKind::Oracle => "oracle",
            SystemKind::Empty => "empty",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown system {s:?}")))
    }

    /// Systems whose output is a frame labeling.
    pub fn is_segmentation(self) -> bool {
        matches!(self, SystemKind::Baseline | SystemKind::Boundary | SystemKind::Smoothing)
    }

    pub fn needs_segmenter(self) -> bool {
        self.is_segmentation() || self == SystemKind::Seg2seq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// A dataset directory with `meta.json`.
    Dataset { path: PathBuf },
    /// Generated on the fly. `config` wins over `profile`; with neither the
    /// stroke-like profile seeded by the plan seed is used.
    Generator {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<GeneratorConfig>,
        n: usize,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generator {
            profile: Some(STROKE_LIKE.into()),
            config: None,
            n: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// Whole sequence groups are assigned to train/val/test in these
    /// proportions.
    ByGroup { train: f64, val: f64, test: f64 },
    /// The splits stored with the dataset.
    Stored,
    Explicit { splits: Splits },
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy::ByGroup {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub format_version: u32,
    pub data: DataSource,
    pub split: SplitPolicy,
    /// Per-sample channel standardization of the features.
    pub normalize: bool,
    pub systems: Vec<SystemKind>,
    pub segmenter: SegmenterConfig,
    pub segmenter_train: TrainConfig,
    pub raw2seq: Seq2SeqConfig,
    pub seg2seq: Seq2SeqConfig,
    pub seq2seq_train: TrainConfig,
    /// Smoothing windows tried on the validation split; empty means the
    /// segmenter config's window.
    pub smoothing_windows: Vec<usize>,
    /// Boundary thresholds tried on the validation split; empty means the
    /// segmenter config's threshold.
    pub boundary_thresholds: Vec<f64>,
    pub bootstrap_replicates: usize,
    /// Frames within which a predicted boundary counts as a detection.
    pub boundary_tolerance: usize,
    pub duration_edges: Vec<f64>,
    /// Train one model per fold of the pooled train+val groups and ensemble
    /// them on the test split.
    pub folds: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            data: DataSource::default(),
            split: SplitPolicy::default(),
            normalize: true,
            systems: SystemKind::ALL.to_vec(),
            segmenter: SegmenterConfig::default(),
            segmenter_train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            raw2seq: Seq2SeqConfig {
                encoder: EncoderKind::Conv,
                ..Seq2SeqConfig::default()
            },
            seg2seq: Seq2SeqConfig {
                input_kind: InputKind::Probs,
                encoder: EncoderKind::Conv,
                ..Seq2SeqConfig::default()
            },
            seq2seq_train: TrainConfig {
                epochs: 25,
                ..TrainConfig::default()
            },
            smoothing_windows: Vec::new(),
            boundary_thresholds: Vec::new(),
            bootstrap_replicates: 1000,
            boundary_tolerance: 10,
            duration_edges: default_duration_edges(),
            folds: None,
            seed: 0,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        crate::io::check_version(self.format_version, "plan")?;
        let bad = |m: String| Err(Error::Config(m));
        if self.systems.is_empty() {
            return bad("plan lists no systems".into());
        }
        let unique: BTreeSet<_> = self.systems.iter().collect();
        if unique.len() != self.systems.len() {
            return bad("plan lists a system twice".into());
        }
        if let SplitPolicy::ByGroup { train, val, test } = self.split {
            if [train, val, test].iter().any(|f| !(*f >= 0.0)) || !(train > 0.0) || !(test > 0.0) {
                return bad(format!("split fractions {train}/{val}/{test}"));
            }
        }
        if let DataSource::Generator { n, .. } = self.data {
            if n < 2 {
                return bad(format!("{n} generated samples"));
            }
        }
        if self.folds.is_some_and(|k| k < 2) {
            return bad("folds must be at least 2".into());
        }
        if self.duration_edges.windows(2).any(|w| !(w[0] < w[1])) || self.duration_edges.iter().any(|e| !(*e > 0.0)) {
            return bad("duration edges must be positive and ascending".into());
        }
        if self.smoothing_windows.iter().any(|w| w % 2 == 0) {
            return bad("smoothing windows must be odd".into());
        }
        if self.boundary_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("boundary thresholds must lie in [0, 1]".into());
        }
        if self.systems.contains(&SystemKind::Boundary) && !self.segmenter.boundary_head {
            return bad("the boundary system needs a segmenter boundary head".into());
        }
        self.segmenter_train.validate()?;
        self.seq2seq_train.validate()
    }
}

/// Assigns whole groups to train/val/test. Groups are shuffled with the
/// seed; the test and validation shares are rounded to whole groups and
/// the rest trains. Ids keep their sorted order inside each split.
pub fn split_by_group(
    groups: &BTreeMap<String, String>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<Splits> {
    let mut keys: Vec<&String> = groups.values().collect::<BTreeSet<_>>().into_iter().collect();
    if keys.len() < 2 {
        return Err(Error::Config(format!(
            "{} sequence group(s); at least 2 are needed to hold out a test split",
            keys.len()
        )));
    }
    keys.shuffle(&mut rng::derived(seed, 0x5911));
    let total: f64 = fractions.iter().sum();
    let g = keys.len() as f64;
    let n_test = ((g * fractions[2] / total).round() as usize).max(1);
    let n_val = (g * fractions[1] / total).round() as usize;
    if n_test + n_val >= keys.len() {
        return Err(Error::Config(format!(
            "{} groups cannot be split {}/{}/{}",
            keys.len(),
            fractions[0],
            fractions[1],
            fractions[2]
        )));
    }
    let test: BTreeSet<&String> = keys[..n_test].iter().copied().collect();
    let val: BTreeSet<&String> = keys[n_test..n_test + n_val].iter().copied().collect();
    let mut splits = Splits::default();
    for (id, group) in groups {
        let dest = if test.contains(group) {
            &mut splits.test
        } else if val.contains(group) {
            &mut splits.val
        } else {
            &mut splits.train
        };
        dest.push(id.clone());
    }
    Ok(splits)
}

/// Partitions ids into `k` folds of whole groups, round-robin over the
/// shuffled group keys.
pub fn fold_assignment(groups: &BTreeMap<String, String>, k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let mut keys: Vec<&String> = groups.values().collect::<BTreeSet<_>>().into_iter().collect();
    if keys.len() < k {
        return Err(Error::Config(format!("{} groups for {k} folds", keys.len())));
    }
    keys.shuffle(&mut rng::derived(seed, 0xf01d));
    let fold_of: BTreeMap<&String, usize> = keys.iter().enumerate().map(|(i, g)| (*g, i % k)).collect();
    let mut folds = vec![Vec::new(); k];
    for (id, group) in groups {
        folds[fold_of[group]].push(id.clone());
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(n: usize, per: usize) -> BTreeMap<String, String> {
        (0..n * per).map(|i| (format!("s{i:03}"), format!("g{}", i % n))).collect()
    }

    #[test]
    fn group_split_is_disjoint_by_group() {
        let g = groups(10, 4);
        let s = split_by_group(&g, [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (24, 8, 8));
        s.validate().unwrap();
        let keys = |ids: &[String]| ids.iter().map(|i| g[i].clone()).collect::<BTreeSet<_>>();
        assert!(keys(&s.train).is_disjoint(&keys(&s.test)));
        assert!(keys(&s.val).is_disjoint(&keys(&s.test)));
        assert!(keys(&s.train).is_disjoint(&keys(&s.val)));
        assert_eq!(s, split_by_group(&g, [0.6, 0.2, 0.2], 3).unwrap());
        assert_ne!(s, split_by_group(&g, [0.6, 0.2, 0.2], 4).unwrap());
        assert!(split_by_group(&groups(1, 5), [0.6, 0.2, 0.2], 3).is_err());
    }

    #[test]
    fn folds_cover_every_id_once() {
        let g = groups(6, 3);
        let f = fold_assignment(&g, 3, 1).unwrap();
        let mut all: Vec<String> = f.concat();
        all.sort();
        assert_eq!(all, g.keys().cloned().collect::<Vec<_>>());
        assert!(f.iter().all(|fold| fold.len() == 6));
        assert!(fold_assignment(&g, 7, 1).is_err());
    }

    #[test]
    fn plan_defaults_roundtrip() {
        let p = ExperimentPlan::default();
        p.validate().unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentPlan>(&text).unwrap(), p);
        let partial: ExperimentPlan = serde_json::from_str(r#"{"systems": ["oracle", "empty"], "seed": 5}"#).unwrap();
        assert_eq!(partial.systems, vec![SystemKind::Oracle, SystemKind::Empty]);
        assert_eq!(partial.bootstrap_replicates, 1000);
        let bad = ExperimentPlan {
            systems: vec![SystemKind::Oracle, SystemKind::Oracle],
            ..ExperimentPlan::default()
        };
        assert!(bad.validate().is_err());
        assert!(SystemKind::parse("raw2seq").is_ok());
        assert!(SystemKind::parse("nope").is_err());
    }
}
