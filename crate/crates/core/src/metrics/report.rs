use serde::{Deserialize, Serialize};

use super::{aer, align, bootstrap_ci, class_counts, edit_score, f1_from, framewise_accuracy_slices};
use crate::error::Result;
use crate::numerics::rng::derive_seed;
use crate::sequence::{ActionSequence, ClassId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl MetricValue {
    pub fn point(value: f64) -> Self {
        Self {
            value,
            lower: None,
            upper: None,
        }
    }
}

/// Metrics of one (ground truth, prediction) pair. Values that are
/// undefined for the pair are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub edit_score: f64,
    pub aer: Option<f64>,
    pub tpr: Option<f64>,
    pub fdr: Option<f64>,
    pub f1: Option<f64>,
    pub framewise_accuracy: Option<f64>,
}

impl SampleMetrics {
    /// An empty prediction against a non-empty ground truth has TPR 0 and
    /// F1 0; its FDR stays undefined.
    pub fn compute(
        gt: &ActionSequence,
        pred: &ActionSequence,
        frames: Option<(&[ClassId], &[ClassId])>,
    ) -> Result<Self> {
        let counts = align(gt, pred);
        let tpr = super::tpr(&counts).ok();
        let fdr = super::fdr(&counts).ok();
        let f1 = match (tpr, fdr) {
            (Some(t), Some(f)) => Some(f1_from(t, f)),
            (Some(t), None) => Some(f1_from(t, 1.0)),
            _ => None,
        };
        let framewise_accuracy = match frames {
            Some((g, p)) => Some(framewise_accuracy_slices(g, p)?),
            None => None,
        };
        Ok(Self {
            edit_score: edit_score(gt, pred),
            aer: aer(gt, pred).ok(),
            tpr,
            fdr,
            f1,
            framewise_accuracy,
        })
    }
}

/// Aggregated metrics. Without bootstrap each value is the per-sample mean;
/// with bootstrap it is the mean over replicate means, bracketed by the
/// interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub n_samples: usize,
    pub edit_score: Option<MetricValue>,
    pub aer: Option<MetricValue>,
    pub tpr: Option<MetricValue>,
    pub fdr: Option<MetricValue>,
    pub f1: Option<MetricValue>,
    pub framewise_accuracy: Option<MetricValue>,
    pub ground_truth_counts: Vec<usize>,
    pub predicted_counts: Vec<usize>,
}

/// Column order of [`MetricReport::csv_row`].
pub const CSV_COLUMNS: &[&str] = &[
    "n_samples",
    "edit_score",
    "edit_score_lower",
    "edit_score_upper",
    "aer",
    "aer_lower",
    "aer_upper",
    "tpr",
    "tpr_lower",
    "tpr_upper",
    "fdr",
    "fdr_lower",
    "fdr_upper",
    "f1",
    "f1_lower",
    "f1_upper",
    "framewise_accuracy",
    "framewise_accuracy_lower",
    "framewise_accuracy_upper",
];

impl MetricReport {
    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![self.n_samples.to_string()];
        for m in [
            &self.edit_score,
            &self.aer,
            &self.tpr,
            &self.fdr,
            &self.f1,
            &self.framewise_accuracy,
        ] {
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            row.push(cell(m.map(|m| m.value)));
            row.push(cell(m.and_then(|m| m.lower)));
            row.push(cell(m.and_then(|m| m.upper)));
        }
        row
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        w.write_record(self.csv_row())?;
        let bytes = w.into_inner().map_err(|e| crate::Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn aggregate(values: Vec<f64>, replicates: usize, seed: u64) -> Result<Option<MetricValue>> {
    if values.is_empty() {
        return Ok(None);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if replicates == 0 {
        return Ok(Some(MetricValue::point(mean)));
    }
    let ci = bootstrap_ci(&values, replicates, seed)?;
    Ok(Some(MetricValue {
        value: ci.mean,
        lower: Some(ci.lower),
        upper: Some(ci.upper),
    }))
}

/// Evaluates paired sequences (and optional frame labelings). Each metric
/// is averaged over the samples where it is defined; `replicates = 0`
/// skips the bootstrap.
pub fn evaluate(
    pairs: &[(ActionSequence, ActionSequence)],
    frames: Option<&[(Vec<ClassId>, Vec<ClassId>)]>,
    num_classes: usize,
    replicates: usize,
    seed: u64,
) -> Result<MetricReport> {
    let mut per_sample = Vec::with_capacity(pairs.len());
    for (i, (g, p)) in pairs.iter().enumerate() {
        let f = frames
            .and_then(|f| f.get(i))
            .map(|(a, b)| (a.as_slice(), b.as_slice()));
        per_sample.push(SampleMetrics::compute(g, p, f)?);
    }
    let collect = |f: &dyn Fn(&SampleMetrics) -> Option<f64>| -> Vec<f64> {
        per_sample.iter().filter_map(f).collect()
    };
    let mut gt_counts = vec![0; num_classes];
    let mut pred_counts = vec![0; num_classes];
    for (g, p) in pairs {
        for (acc, c) in gt_counts.iter_mut().zip(class_counts(g, num_classes)) {
            *acc += c;
        }
        for (acc, c) in pred_counts.iter_mut().zip(class_counts(p, num_classes)) {
            *acc += c;
        }
    }
    Ok(MetricReport {
        format_version: 1,
        n_samples: pairs.len(),
        edit_score: aggregate(collect(&|m| Some(m.edit_score)), replicates, derive_seed(seed, 0))?,
        aer: aggregate(collect(&|m| m.aer), replicates, derive_seed(seed, 1))?,
        tpr: aggregate(collect(&|m| m.tpr), replicates, derive_seed(seed, 2))?,
        fdr: aggregate(collect(&|m| m.fdr), replicates, derive_seed(seed, 3))?,
        f1: aggregate(collect(&|m| m.f1), replicates, derive_seed(seed, 4))?,
        framewise_accuracy: aggregate(
            collect(&|m| m.framewise_accuracy),
            replicates,
            derive_seed(seed, 5),
        )?,
        ground_truth_counts: gt_counts,
        predicted_counts: pred_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[usize]) -> ActionSequence {
        ActionSequence::from_vec(v.to_vec())
    }

    #[test]
    fn oracle_and_empty_predictions() {
        let gts = [seq(&[0, 1, 2]), seq(&[2, 0])];
        let oracle: Vec<_> = gts.iter().map(|g| (g.clone(), g.clone())).collect();
        let r = evaluate(&oracle, None, 3, 100, 1).unwrap();
        assert_eq!(r.edit_score.unwrap().value, 100.0);
        assert_eq!(r.aer.unwrap().value, 0.0);
        assert_eq!(r.f1.unwrap().value, 1.0);
        let empty: Vec<_> = gts.iter().map(|g| (g.clone(), seq(&[]))).collect();
        let r = evaluate(&empty, None, 3, 0, 1).unwrap();
        assert_eq!(r.aer.unwrap().value, 1.0);
        assert_eq!(r.tpr.unwrap().value, 0.0);
        assert!(r.fdr.is_none());
    }

    #[test]
    fn csv_has_documented_columns() {
        let r = evaluate(&[(seq(&[0]), seq(&[1]))], None, 2, 10, 0).unwrap();
        let text = r.to_csv().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap().split(',').count(), CSV_COLUMNS.len());
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn interval_brackets_value() {
        let pairs: Vec<_> = (0..20)
            .map(|i| (seq(&[0, 1, 2]), seq(&if i % 3 == 0 { vec![0] } else { vec![0, 1, 2] })))
            .collect();
        let r = evaluate(&pairs, None, 3, 1000, 5).unwrap();
        let es = r.edit_score.unwrap();
        assert!(es.lower.unwrap() <= es.value && es.value <= es.upper.unwrap());
    }
}
