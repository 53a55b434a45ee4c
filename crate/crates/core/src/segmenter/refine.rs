use serde::{Deserialize, Serialize};

use super::FrameProbs;
use crate::error::{Error, Result};
use crate::numerics::argmax;
use crate::sequence::FrameLabeling;

/// Post-processing that turns frame probabilities into a labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Refinement {
    /// Plain argmax.
    None,
    Smoothing { window: usize },
    Boundary { threshold: f64, nms_radius: usize },
}

impl Refinement {
    pub fn apply(&self, p: &FrameProbs) -> Result<FrameLabeling> {
        match *self {
            Refinement::None => Ok(p.argmax_labels()),
            Refinement::Smoothing { window } => smooth_refine(p, window),
            Refinement::Boundary { threshold, nms_radius } => boundary_refine(p, threshold, nms_radius),
        }
    }

    /// Name of the matching harness system.
    pub fn system_name(&self) -> &'static str {
        match self {
            Refinement::None => "baseline",
            Refinement::Smoothing { .. } => "smoothing",
            Refinement::Boundary { .. } => "boundary",
        }
    }
}

/// Argmax of the centered moving average of class probabilities. The window
/// is truncated at the sequence ends.
pub fn smooth_refine(p: &FrameProbs, window: usize) -> Result<FrameLabeling> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!("smoothing window {window} must be odd")));
    }
    let (t_len, c) = (p.len(), p.num_classes());
    let half = window / 2;
    // prefix[t * c + k] = sum of class k over frames [0, t)
    let mut prefix = vec![0.0; (t_len + 1) * c];
    for t in 0..t_len {
        for k in 0..c {
            prefix[(t + 1) * c + k] = prefix[t * c + k] + p.row(t)[k];
        }
    }
    let mut sums = vec![0.0; c];
    let labels = (0..t_len)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(t_len);
            for (k, s) in sums.iter_mut().enumerate() {
                *s = prefix[hi * c + k] - prefix[lo * c + k];
            }
            argmax(&sums)
        })
        .collect();
    Ok(FrameLabeling {
        labels,
        frame_rate: p.frame_rate,
    })
}

/// Segment starts: frames whose boundary probability exceeds `threshold`,
/// kept greedily from the most confident with no two within `nms_radius`.
pub fn detect_boundaries(boundary: &[f64], threshold: f64, nms_radius: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (1..boundary.len()).filter(|&t| boundary[t] > threshold).collect();
    candidates.sort_by(|&a, &b| boundary[b].total_cmp(&boundary[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for t in candidates {
        if kept.iter().all(|&k| k.abs_diff(t) > nms_radius) {
            kept.push(t);
        }
    }
    kept.sort_unstable();
    kept
}

/// Splits the frames at detected boundaries and labels each piece with the
/// class of highest mean probability over it.
pub fn boundary_refine(p: &FrameProbs, threshold: f64, nms_radius: usize) -> Result<FrameLabeling> {
    let boundary = p
        .boundary()
        .ok_or_else(|| Error::Config("boundary refinement needs boundary probabilities".into()))?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("boundary threshold {threshold}")));
    }
    let t_len = p.len();
    let mut cuts = detect_boundaries(boundary, threshold, nms_radius);
    cuts.insert(0, 0);
    cuts.push(t_len);
    let mut labels = Vec::with_capacity(t_len);
    let mut sums = vec![0.0; p.num_classes()];
    for w in cuts.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        sums.fill(0.0);
        for t in w[0]..w[1] {
            for (s, v) in sums.iter_mut().zip(p.row(t)) {
                *s += v;
            }
        }
        labels.extend(std::iter::repeat_n(argmax(&sums), w[1] - w[0]));
    }
    Ok(FrameLabeling {
        labels,
        frame_rate: p.frame_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_class(class1: &[f64], boundary: Option<Vec<f64>>) -> FrameProbs {
        let data = class1.iter().flat_map(|&q| [1.0 - q, q]).collect();
        FrameProbs::new(data, 2, boundary, 10.0).unwrap()
    }

    #[test]
    fn window_one_is_argmax() {
        let p = two_class(&[0.2, 0.6, 0.4, 0.9], None);
        assert_eq!(smooth_refine(&p, 1).unwrap(), p.argmax_labels());
        assert!(smooth_refine(&p, 4).is_err());
    }

    #[test]
    fn constant_probabilities_stay_constant() {
        let p = two_class(&[0.7; 9], None);
        for w in [1, 3, 5, 17] {
            assert_eq!(smooth_refine(&p, w).unwrap().labels, vec![1; 9]);
        }
    }

    #[test]
    fn spike_is_smoothed_away() {
        // frame 3: class-1 mass (4 * 0.1 + 0.8) / 5 = 0.24 under window 5
        let p = two_class(&[0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1], None);
        assert_eq!(p.argmax_labels().labels[3], 1);
        assert_eq!(smooth_refine(&p, 5).unwrap().labels, vec![0; 7]);
    }

    proptest! {
        #[test]
        fn short_runs_are_removed(half in 1usize..6, run in 1usize..6, pad in 0usize..4, a in 0usize..3, b in 0usize..3) {
            prop_assume!(a != b && run <= half);
            let window = 2 * half + 1;
            let side = window + pad;
            let mut labels = vec![a; side];
            labels.extend(std::iter::repeat_n(b, run));
            labels.extend(std::iter::repeat_n(a, side));
            let data = labels.iter().flat_map(|&l| (0..3).map(move |k| if k == l { 1.0 } else { 0.0 })).collect();
            let p = FrameProbs::new(data, 3, None, 10.0).unwrap();
            prop_assert_eq!(smooth_refine(&p, window).unwrap().labels, vec![a; labels.len()]);
        }
    }

    #[test]
    fn no_boundary_means_one_segment() {
        // column means: class 1 = (0.6 + 0.6 + 0.1) / 3 = 0.433, so class 0
        let p = two_class(&[0.6, 0.6, 0.1], Some(vec![0.2, 0.4, 0.1]));
        assert_eq!(boundary_refine(&p, 0.5, 5).unwrap().labels, vec![0, 0, 0]);
        assert!(boundary_refine(&two_class(&[0.5], None), 0.5, 5).is_err());
    }

    #[test]
    fn noisy_frame_is_absorbed() {
        // first piece mean of class 0 is (3 * 0.8 + 0.3) / 4 = 0.675
        let q = [0.2, 0.2, 0.7, 0.2, 0.9, 0.8, 0.9, 0.9];
        let b = vec![0.1, 0.1, 0.2, 0.1, 0.9, 0.1, 0.1, 0.1];
        let p = two_class(&q, Some(b));
        assert_eq!(p.argmax_labels().labels, vec![0, 0, 1, 0, 1, 1, 1, 1]);
        assert_eq!(boundary_refine(&p, 0.5, 2).unwrap().labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn exact_boundaries_recover_labels() {
        let gt = [0, 0, 0, 0, 0, 0, 2, 2, 2, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let mut data = Vec::new();
        let mut b = Vec::new();
        for (t, &l) in gt.iter().enumerate() {
            data.extend((0..3).map(|k| if k == l { 0.9 } else { 0.05 }));
            b.push(if t > 0 && gt[t - 1] != l { 0.95 } else { 0.02 });
        }
        let p = FrameProbs::new(data, 3, Some(b), 10.0).unwrap();
        assert_eq!(boundary_refine(&p, 0.5, 5).unwrap().labels, gt.to_vec());
    }

    #[test]
    fn suppression_keeps_the_strongest() {
        let b = [0.0, 0.6, 0.9, 0.7, 0.0, 0.0, 0.0, 0.0, 0.8, 0.0];
        assert_eq!(detect_boundaries(&b, 0.5, 2), vec![2, 8]);
        assert_eq!(detect_boundaries(&b, 0.5, 0), vec![1, 2, 3, 8]);
    }
}
