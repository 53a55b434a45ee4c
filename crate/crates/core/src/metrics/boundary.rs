use serde::{Deserialize, Serialize};

use crate::sequence::{segments_from_frames, FrameLabeling};

/// Bucket edges in seconds: `[0, e0), [e0, e1), ..., [e_last, inf)`.
pub fn default_duration_edges() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationBucket {
    pub lower: f64,
    /// `None` for the open-ended last bucket.
    pub upper: Option<f64>,
    pub count: usize,
    pub detected: usize,
}

impl DurationBucket {
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.detected as f64 / self.count as f64)
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.lower && self.upper.is_none_or(|u| d < u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationBucketReport {
    pub buckets: Vec<DurationBucket>,
}

impl DurationBucketReport {
    pub fn empty(edges: &[f64]) -> Self {
        let mut lowers = vec![0.0];
        lowers.extend_from_slice(edges);
        let buckets = lowers
            .iter()
            .enumerate()
            .map(|(i, &lower)| DurationBucket {
                lower,
                upper: edges.get(i).copied(),
                count: 0,
                detected: 0,
            })
            .collect();
        Self { buckets }
    }

    /// Adds the counts of another report built over the same edges.
    pub fn merge(&mut self, other: &DurationBucketReport) {
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            a.count += b.count;
            a.detected += b.detected;
        }
    }

    /// `(bucket index, accuracy)` for populated buckets, ascending.
    pub fn populated(&self) -> Vec<(usize, f64)> {
        self.buckets
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.accuracy().map(|a| (i, a)))
            .collect()
    }
}

/// Per-duration-bucket rate at which ground-truth action starts are matched
/// by a predicted boundary within `tolerance` frames. The first segment has
/// no starting boundary and is skipped. Edges must be ascending.
pub fn boundary_accuracy_by_duration(
    gt: &FrameLabeling,
    predicted_boundaries: &[usize],
    edges: &[f64],
    tolerance: usize,
) -> DurationBucketReport {
    let mut report = DurationBucketReport::empty(edges);
    let mut predicted = predicted_boundaries.to_vec();
    predicted.sort_unstable();
    let segments = segments_from_frames(gt);
    for seg in segments.segments().iter().skip(1) {
        let duration = seg.len() as f64 / gt.frame_rate;
        let Some(bucket) = report.buckets.iter_mut().find(|b| b.contains(duration)) else {
            continue;
        };
        bucket.count += 1;
        let lo = seg.start.saturating_sub(tolerance);
        let hi = seg.start + tolerance;
        let first = predicted.partition_point(|&b| b < lo);
        if predicted.get(first).is_some_and(|&b| b <= hi) {
            bucket.detected += 1;
        }
    }
    report
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::boundaries_of;

    fn labeling(runs: &[(usize, usize)], rate: f64) -> FrameLabeling {
        let labels = runs
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect();
        FrameLabeling::new(labels, rate).unwrap()
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = labeling(&[(0, 4), (1, 12), (2, 3), (0, 40)], 10.0);
        let edges = default_duration_edges();
        let perfect = boundary_accuracy_by_duration(&gt, &boundaries_of(&gt), &edges, 0);
        assert!(perfect.populated().iter().all(|&(_, a)| a == 1.0));
        assert_eq!(perfect.buckets.iter().map(|b| b.count).sum::<usize>(), 3);
        let none = boundary_accuracy_by_duration(&gt, &[], &edges, 5);
        assert!(none.populated().iter().all(|&(_, a)| a == 0.0));
    }

    #[test]
    fn hand_checked_jitter() {
        // 10 fps: a for 2 s, b for 0.5 s (starts at 20), c for 5 s (starts at 25).
        let gt = labeling(&[(0, 20), (1, 5), (2, 50)], 10.0);
        let r = boundary_accuracy_by_duration(&gt, &[31, 22], &default_duration_edges(), 2);
        let half_second = r.buckets.iter().find(|b| b.contains(0.5)).unwrap();
        let five_seconds = r.buckets.iter().find(|b| b.contains(5.0)).unwrap();
        assert_eq!((half_second.count, half_second.accuracy()), (1, Some(1.0)));
        assert_eq!((five_seconds.count, five_seconds.accuracy()), (1, Some(0.0)));
        assert_eq!(r.buckets.iter().map(|b| b.count).sum::<usize>(), 2);
    }

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.9, 0.9, 0.5, 0.1]).unwrap();
        assert!(r < -0.9);
    }
}
