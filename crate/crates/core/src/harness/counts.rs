use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::class_counts;
use crate::sequence::ActionSequence;

/// Ground-truth and predicted occurrences of one class within one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub group: String,
    pub class: String,
    pub ground_truth: f64,
    pub predicted: f64,
    /// `(predicted - ground_truth) / ground_truth`; undefined for zero truth.
    pub relative_error: Option<f64>,
}

/// Per-group per-class counts followed by `mean` and `std` rows (population
/// standard deviation across groups) for each class.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CountReport {
    pub rows: Vec<CountRow>,
    pub summary: Vec<CountRow>,
}

pub fn count_report(
    gt: &[ActionSequence],
    predicted: &[ActionSequence],
    groups: &[String],
    classes: &[String],
) -> Result<CountReport> {
    if gt.len() != predicted.len() || gt.len() != groups.len() {
        return Err(Error::Shape(format!(
            "{} ground truths, {} predictions, {} group keys",
            gt.len(),
            predicted.len(),
            groups.len()
        )));
    }
    let c = classes.len();
    let mut per_group: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for ((g, p), key) in gt.iter().zip(predicted).zip(groups) {
        let entry = per_group.entry(key).or_insert_with(|| (vec![0; c], vec![0; c]));
        for (acc, n) in entry.0.iter_mut().zip(class_counts(g, c)) {
            *acc += n;
        }
        for (acc, n) in entry.1.iter_mut().zip(class_counts(p, c)) {
            *acc += n;
        }
    }
    let rel = |g: f64, p: f64| (g > 0.0).then(|| (p - g) / g);
    let mut report = CountReport::default();
    for (group, (g, p)) in &per_group {
        for k in 0..c {
            report.rows.push(CountRow {
                group: group.to_string(),
                class: classes[k].clone(),
                ground_truth: g[k] as f64,
                predicted: p[k] as f64,
                relative_error: rel(g[k] as f64, p[k] as f64),
            });
        }
    }
    let stats = |v: &[f64]| -> Option<(f64, f64)> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        Some((m, var.sqrt()))
    };
    for (k, class) in classes.iter().enumerate() {
        let col = |f: &dyn Fn(&CountRow) -> Option<f64>| -> Vec<f64> {
            report.rows.iter().skip(k).step_by(c.max(1)).filter_map(f).collect()
        };
        let g = stats(&col(&|r| Some(r.ground_truth)));
        let p = stats(&col(&|r| Some(r.predicted)));
        let e = stats(&col(&|r| r.relative_error));
        if let (Some(g), Some(p)) = (g, p) {
            report.summary.push(CountRow {
                group: "mean".into(),
                class: class.clone(),
                ground_truth: g.0,
                predicted: p.0,
                relative_error: e.map(|e| e.0),
            });
            report.summary.push(CountRow {
                group: "std".into(),
                class: class.clone(),
                ground_truth: g.1,
                predicted: p.1,
                relative_error: e.map(|e| e.1),
            });
        }
    }
    Ok(report)
}

impl CountReport {
    pub fn csv_records(&self) -> impl Iterator<Item = [String; 5]> + '_ {
        self.rows.iter().chain(&self.summary).map(|r| {
            [
                r.group.clone(),
                r.class.clone(),
                r.ground_truth.to_string(),
                r.predicted.to_string(),
                r.relative_error.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
    }
}

pub const COUNT_COLUMNS: [&str; 5] = ["group", "class", "ground_truth", "predicted", "relative_error"];

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[usize]) -> ActionSequence {
        ActionSequence::from_vec(v.to_vec())
    }

    fn names() -> Vec<String> {
        vec!["reach".into(), "idle".into()]
    }

    #[test]
    fn exact_predictions_have_zero_error() {
        let gt = vec![s(&[0, 1, 0]), s(&[1])];
        let groups = vec!["p1".to_string(), "p2".to_string()];
        let r = count_report(&gt, &gt, &groups, &names()).unwrap();
        for row in r.rows.iter().chain(&r.summary) {
            assert_eq!(row.ground_truth, row.predicted);
            assert!(row.relative_error.is_none_or(|e| e == 0.0));
        }
    }

    #[test]
    fn one_extra_reach() {
        let gt = vec![s(&[0, 1]), s(&[0, 1, 0]), s(&[1, 0])];
        let mut pred = gt.clone();
        pred[1] = s(&[0, 1, 0, 1, 0]);
        let groups = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        let r = count_report(&gt, &pred, &groups, &names()).unwrap();
        let reach_b = r.rows.iter().find(|x| x.group == "b" && x.class == "reach").unwrap();
        assert_eq!(reach_b.predicted - reach_b.ground_truth, 1.0);
        assert_eq!(reach_b.relative_error, Some(0.5));
        let reach_a = r.rows.iter().find(|x| x.group == "a" && x.class == "reach").unwrap();
        assert_eq!(reach_a.predicted, reach_a.ground_truth);
        // mean over groups a (2 -> 2) and b (2 -> 3)
        let mean = r.summary.iter().find(|x| x.group == "mean" && x.class == "reach").unwrap();
        assert_eq!((mean.ground_truth, mean.predicted), (2.0, 2.5));
        let std = r.summary.iter().find(|x| x.group == "std" && x.class == "reach").unwrap();
        assert_eq!(std.predicted, 0.5);
        assert!(count_report(&gt, &pred[..2], &groups, &names()).is_err());
    }
}
