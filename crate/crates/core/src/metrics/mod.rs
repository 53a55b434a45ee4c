//! Edit-distance metrics over action sequences, alignment-based detection
//! rates, frame accuracy, bootstrap intervals and boundary analysis.

mod bootstrap;
mod boundary;
mod report;

pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use boundary::{
    boundary_accuracy_by_duration, default_duration_edges, spearman, DurationBucket,
    DurationBucketReport,
};
pub use report::{evaluate, MetricReport, MetricValue, SampleMetrics, CSV_COLUMNS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{ActionSequence, ClassId, FrameLabeling};

/// Minimum number of unit-cost insertions, deletions and substitutions
/// turning `p` into `g`.
pub fn levenshtein(g: &ActionSequence, p: &ActionSequence) -> usize {
    levenshtein_slices(g.items(), p.items())
}

pub fn levenshtein_slices(g: &[ClassId], p: &[ClassId]) -> usize {
    let table = edit_table(g, p);
    table[g.len()][p.len()]
}

fn edit_table(g: &[ClassId], p: &[ClassId]) -> Vec<Vec<usize>> {
    let (n, m) = (g.len(), p.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(g[i - 1] != p[j - 1]);
            let del = d[i - 1][j] + 1;
            let ins = d[i][j - 1] + 1;
            d[i][j] = sub.min(del).min(ins);
        }
    }
    d
}

/// Edit score on the 0-100 scale. Two empty sequences score 100.
pub fn edit_score(g: &ActionSequence, p: &ActionSequence) -> f64 {
    let longest = g.len().max(p.len());
    if longest == 0 {
        return 100.0;
    }
    (1.0 - levenshtein(g, p) as f64 / longest as f64) * 100.0
}

/// Action error rate: edit distance over ground-truth length.
pub fn aer(g: &ActionSequence, p: &ActionSequence) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::UndefinedMetric(
            "action error rate of an empty ground truth".into(),
        ));
    }
    Ok(levenshtein(g, p) as f64 / g.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentCounts {
    pub correct: usize,
    pub substituted: usize,
    /// Ground-truth actions absent from the prediction.
    pub missed: usize,
    /// Predicted actions absent from the ground truth.
    pub spurious: usize,
}

impl AlignmentCounts {
    pub fn ground_truth_len(&self) -> usize {
        self.correct + self.substituted + self.missed
    }

    pub fn predicted_len(&self) -> usize {
        self.correct + self.substituted + self.spurious
    }

    pub fn edits(&self) -> usize {
        self.substituted + self.missed + self.spurious
    }
}

impl std::ops::AddAssign for AlignmentCounts {
    fn add_assign(&mut self, o: Self) {
        self.correct += o.correct;
        self.substituted += o.substituted;
        self.missed += o.missed;
        self.spurious += o.spurious;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match(ClassId),
    Substitute { truth: ClassId, predicted: ClassId },
    Missed(ClassId),
    Spurious(ClassId),
}

/// One minimum-cost alignment, in sequence order. Ties in the backtrace
/// prefer match/substitute, then deletion (missed), then insertion
/// (spurious).
pub fn alignment(g: &ActionSequence, p: &ActionSequence) -> Vec<AlignOp> {
    let (g, p) = (g.items(), p.items());
    let d = edit_table(g, p);
    let (mut i, mut j) = (g.len(), p.len());
    let mut ops = Vec::with_capacity(i.max(j));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(g[i - 1] != p[j - 1]) {
            ops.push(if g[i - 1] == p[j - 1] {
                AlignOp::Match(g[i - 1])
            } else {
                AlignOp::Substitute {
                    truth: g[i - 1],
                    predicted: p[j - 1],
                }
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(AlignOp::Missed(g[i - 1]));
            i -= 1;
        } else {
            ops.push(AlignOp::Spurious(p[j - 1]));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn align(g: &ActionSequence, p: &ActionSequence) -> AlignmentCounts {
    let mut counts = AlignmentCounts::default();
    for op in alignment(g, p) {
        match op {
            AlignOp::Match(_) => counts.correct += 1,
            AlignOp::Substitute { .. } => counts.substituted += 1,
            AlignOp::Missed(_) => counts.missed += 1,
            AlignOp::Spurious(_) => counts.spurious += 1,
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRates {
    pub tpr: f64,
    pub fdr: f64,
    pub f1: f64,
}

/// True-positive rate, false-discovery rate and their F1 combination
/// (harmonic mean of TPR and 1 - FDR).
pub fn tpr_fdr_f1(a: &AlignmentCounts) -> Result<DetectionRates> {
    let tpr = tpr(a)?;
    let fdr = fdr(a)?;
    Ok(DetectionRates {
        tpr,
        fdr,
        f1: f1_from(tpr, fdr),
    })
}

pub fn tpr(a: &AlignmentCounts) -> Result<f64> {
    match a.ground_truth_len() {
        0 => Err(Error::UndefinedMetric("TPR with empty ground truth".into())),
        n => Ok(a.correct as f64 / n as f64),
    }
}

pub fn fdr(a: &AlignmentCounts) -> Result<f64> {
    match a.predicted_len() {
        0 => Err(Error::UndefinedMetric("FDR with empty prediction".into())),
        n => Ok((a.substituted + a.spurious) as f64 / n as f64),
    }
}

pub(crate) fn f1_from(tpr: f64, fdr: f64) -> f64 {
    let precision = 1.0 - fdr;
    let denom = precision + tpr;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * precision * tpr / denom
    }
}

pub fn framewise_accuracy(gt: &FrameLabeling, pred: &FrameLabeling) -> Result<f64> {
    framewise_accuracy_slices(&gt.labels, &pred.labels)
}

pub fn framewise_accuracy_slices(gt: &[ClassId], pred: &[ClassId]) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} ground-truth frames vs {} predicted",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::UndefinedMetric("frame accuracy of zero frames".into()));
    }
    let hits = gt.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Occurrences of each class; out-of-range indices are ignored.
pub fn class_counts(s: &ActionSequence, num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &i in s.items() {
        if let Some(c) = counts.get_mut(i) {
            *c += 1;
        }
    }
    counts
}

/// Row-major `c x c` confusion counts accumulated from alignment
/// backtraces: matches on the diagonal, substitutions off it.
pub fn confusion_counts(
    pairs: &[(ActionSequence, ActionSequence)],
    num_classes: usize,
) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (g, p) in pairs {
        for op in alignment(g, p) {
            match op {
                AlignOp::Match(c) if c < num_classes => m[c][c] += 1,
                AlignOp::Substitute { truth, predicted }
                    if truth < num_classes && predicted < num_classes =>
                {
                    m[truth][predicted] += 1
                }
                _ => {}
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REACH: usize = 0;
    const IDLE: usize = 1;
    const STABILIZE: usize = 2;
    const TRANSPORT: usize = 3;

    fn seq(v: &[usize]) -> ActionSequence {
        ActionSequence::from_vec(v.to_vec())
    }

    // Every monotone alignment of g and p, enumerated recursively.
    fn brute_force_alignments(g: &[usize], p: &[usize]) -> Vec<AlignmentCounts> {
        if g.is_empty() && p.is_empty() {
            return vec![AlignmentCounts::default()];
        }
        let mut out = Vec::new();
        if !g.is_empty() && !p.is_empty() {
            for mut c in brute_force_alignments(&g[1..], &p[1..]) {
                if g[0] == p[0] {
                    c.correct += 1;
                } else {
                    c.substituted += 1;
                }
                out.push(c);
            }
        }
        if !g.is_empty() {
            for mut c in brute_force_alignments(&g[1..], p) {
                c.missed += 1;
                out.push(c);
            }
        }
        if !p.is_empty() {
            for mut c in brute_force_alignments(g, &p[1..]) {
                c.spurious += 1;
                out.push(c);
            }
        }
        out
    }

    #[test]
    fn levenshtein_examples() {
        let g = seq(&[REACH, IDLE, STABILIZE]);
        assert_eq!(levenshtein(&g, &seq(&[REACH, TRANSPORT])), 2);
        assert_eq!(levenshtein(&seq(&[0, 1, 2]), &seq(&[0, 1, 2])), 0);
        assert_eq!(levenshtein(&seq(&[]), &seq(&[0, 1])), 2);
    }

    #[test]
    fn edit_score_and_aer_examples() {
        let g = seq(&[REACH, IDLE, STABILIZE]);
        let p1 = seq(&[REACH, IDLE]);
        let p2 = seq(&[REACH, IDLE, STABILIZE, TRANSPORT]);
        assert!((edit_score(&g, &p1) - 200.0 / 3.0).abs() < 1e-9);
        assert!((edit_score(&g, &p2) - 75.0).abs() < 1e-9);
        assert_eq!(edit_score(&g, &g), 100.0);
        assert_eq!(edit_score(&seq(&[]), &seq(&[])), 100.0);
        assert_eq!(edit_score(&seq(&[]), &seq(&[1])), 0.0);
        assert!((aer(&g, &p1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((aer(&g, &p2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(aer(&g, &g).unwrap(), 0.0);
        assert!(matches!(aer(&seq(&[]), &g), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn aer_is_not_symmetric() {
        let a = seq(&[0]);
        let b = seq(&[0, 1, 2]);
        assert_ne!(aer(&a, &b).unwrap(), aer(&b, &a).unwrap());
        assert_eq!(edit_score(&a, &b), edit_score(&b, &a));
    }

    #[test]
    fn align_example_matches_enumeration() {
        let g = [REACH, IDLE, STABILIZE];
        let p = [REACH, TRANSPORT];
        let all = brute_force_alignments(&g, &p);
        let best = all.iter().map(AlignmentCounts::edits).min().unwrap();
        let optimal: Vec<_> = all.iter().filter(|c| c.edits() == best).collect();
        let expected = AlignmentCounts {
            correct: 1,
            substituted: 1,
            missed: 1,
            spurious: 0,
        };
        assert!(optimal.iter().all(|c| **c == expected));
        assert_eq!(align(&seq(&g), &seq(&p)), expected);
    }

    #[test]
    fn align_edge_cases() {
        let s = seq(&[0, 1, 2, 1]);
        assert_eq!(
            align(&s, &s),
            AlignmentCounts {
                correct: 4,
                ..Default::default()
            }
        );
        assert_eq!(
            align(&seq(&[]), &seq(&[0])),
            AlignmentCounts {
                spurious: 1,
                ..Default::default()
            }
        );
    }

    #[test]
    fn align_tie_break_prefers_substitution() {
        // [0] vs [1]: substitution and missed+spurious differ in cost, but
        // [0,1] vs [1,0] has several optimal alignments.
        let c = align(&seq(&[0, 1]), &seq(&[1, 0]));
        assert_eq!(c.edits(), 2);
        assert_eq!(c.substituted, 2);
    }

    #[test]
    fn detection_rates() {
        let c = AlignmentCounts {
            correct: 1,
            substituted: 1,
            missed: 1,
            spurious: 0,
        };
        let r = tpr_fdr_f1(&c).unwrap();
        assert!((r.tpr - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.fdr - 0.5).abs() < 1e-12);
        // 2 * 0.5 * (1/3) / (0.5 + 1/3) = (1/3) / (5/6) = 0.4
        assert!((r.f1 - 0.4).abs() < 1e-12);

        let perfect = AlignmentCounts {
            correct: 5,
            ..Default::default()
        };
        let r = tpr_fdr_f1(&perfect).unwrap();
        assert_eq!((r.tpr, r.fdr, r.f1), (1.0, 0.0, 1.0));

        let wrong = AlignmentCounts {
            substituted: 2,
            spurious: 1,
            ..Default::default()
        };
        assert_eq!(tpr_fdr_f1(&wrong).unwrap().f1, 0.0);
        assert!(tpr_fdr_f1(&AlignmentCounts::default()).is_err());
    }

    #[test]
    fn framewise_examples() {
        assert_eq!(framewise_accuracy_slices(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(framewise_accuracy_slices(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(
            framewise_accuracy_slices(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap(),
            0.75
        );
        assert!(matches!(
            framewise_accuracy_slices(&[0], &[0, 1]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn class_count_examples() {
        assert_eq!(class_counts(&seq(&[REACH, IDLE, REACH]), 5), vec![2, 1, 0, 0, 0]);
        assert_eq!(class_counts(&seq(&[]), 3), vec![0, 0, 0]);
    }

    #[test]
    fn confusion_from_alignment() {
        let pairs = vec![(seq(&[0, 1, 2]), seq(&[0, 2, 2]))];
        let m = confusion_counts(&pairs, 3);
        assert_eq!(m[0][0], 1);
        assert_eq!(m[1][2], 1);
        assert_eq!(m[2][2], 1);
    }

    fn recursive_levenshtein(g: &[usize], p: &[usize]) -> usize {
        match (g.split_first(), p.split_first()) {
            (None, _) => p.len(),
            (_, None) => g.len(),
            (Some((a, gr)), Some((b, pr))) => {
                let sub = recursive_levenshtein(gr, pr) + usize::from(a != b);
                let del = recursive_levenshtein(gr, p) + 1;
                let ins = recursive_levenshtein(g, pr) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    fn small_seq() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0usize..3, 0..6)
    }

    proptest! {
        #[test]
        fn levenshtein_matches_recursion(g in small_seq(), p in small_seq()) {
            prop_assert_eq!(levenshtein_slices(&g, &p), recursive_levenshtein(&g, &p));
        }

        #[test]
        fn metric_properties(
            g in proptest::collection::vec(0usize..4, 0..12),
            p in proptest::collection::vec(0usize..4, 0..12),
            q in proptest::collection::vec(0usize..4, 0..12),
        ) {
            let (gs, ps, qs) = (seq(&g), seq(&p), seq(&q));
            let l = levenshtein(&gs, &ps);
            prop_assert_eq!(l, levenshtein(&ps, &gs));
            prop_assert_eq!(l == 0, g == p);
            prop_assert!(l <= g.len().max(p.len()));
            prop_assert!(levenshtein(&gs, &qs) <= l + levenshtein(&ps, &qs));
            let c = align(&gs, &ps);
            prop_assert_eq!(c.edits(), l);
            prop_assert_eq!(c.ground_truth_len(), g.len());
            prop_assert_eq!(c.predicted_len(), p.len());
            let es = edit_score(&gs, &ps);
            prop_assert!((0.0..=100.0).contains(&es));
            prop_assert_eq!(es, edit_score(&ps, &gs));
            if !g.is_empty() {
                let a = aer(&gs, &ps).unwrap();
                let via_es = (1.0 - es / 100.0) * g.len().max(p.len()) as f64 / g.len() as f64;
                prop_assert!((a - via_es).abs() < 1e-12);
            }
        }
    }
}
