//! Seeded semi-Markov generator of primitive-like labeled time series.
//!
//! Each sequence is a chain of segments. The next class is drawn from a
//! zero-diagonal transition matrix, the segment length from a shifted
//! negative binomial (gamma-Poisson mixture) with the class's mean duration.
//! Frame features are the class's emission mean, box-filtered over
//! `crossfade` frames so that adjacent segments blend linearly, plus
//! Gaussian noise.
//!
//! Sample `i` draws from its own stream `derive_seed(seed, i)`, so a sample
//! does not depend on how many others are generated.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{self, Rng};
use crate::sequence::{segments_from_labels, FeatureSequence, FrameLabeling, LabeledSample};

pub const STROKE_LIKE: &str = "stroke-like";
pub const MIXED_DURATION: &str = "mixed-duration";
pub const PROFILES: [&str; 2] = [STROKE_LIKE, MIXED_DURATION];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub class_names: Vec<String>,
    pub feature_dim: usize,
    pub frame_rate: f64,
    /// Row-stochastic `c x c` matrix with zero diagonal.
    pub transitions: Vec<Vec<f64>>,
    /// Mean segment duration per class, in seconds.
    pub mean_durations: Vec<f64>,
    /// Negative-binomial shape; `None` makes durations deterministic.
    pub dispersion: Option<f64>,
    pub min_duration_frames: usize,
    /// `c x D` emission means.
    pub emission_means: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub crossfade: usize,
    /// Each segment starts with a linear ramp from the previous segment's
    /// mean over this fraction of its own length, so longer actions have
    /// slower onsets. 0 disables the ramp.
    #[serde(default)]
    pub onset_fraction: f64,
    /// Inclusive range of the target length in frames. Segments are drawn
    /// until the target is reached; the last one is kept whole.
    pub length_range: (usize, usize),
    /// Samples are assigned round-robin to this many groups (subjects).
    pub groups: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Five classes at 100 fps, 16 channels, sub-second mean durations
    /// {0.4, 0.6, 0.8, 1.0, 1.5} s, noise 0.5, crossfade 6 frames. Class
    /// means are drawn at scale 0.11, close enough that single frames are
    /// ambiguous and frame-wise predictions flicker.
    pub fn stroke_like(seed: u64) -> Self {
        let c = 5;
        let d = 16;
        let names = ["reach", "transport", "reposition", "stabilize", "idle"];
        Self {
            class_names: names.iter().map(|s| s.to_string()).collect(),
            feature_dim: d,
            frame_rate: 100.0,
            transitions: uniform_transitions(c),
            mean_durations: vec![0.4, 0.6, 0.8, 1.0, 1.5],
            dispersion: Some(4.0),
            min_duration_frames: 3,
            emission_means: random_emission_means(c, d, 0.11, seed),
            noise_sigma: 0.5,
            crossfade: 6,
            onset_fraction: 0.0,
            length_range: (600, 900),
            groups: 10,
            seed,
        }
    }

    /// Three classes with mean durations {0.3, 1, 4} s whose onsets ramp
    /// in over a quarter of the segment, on 15-25 s sequences.
    pub fn mixed_duration(seed: u64) -> Self {
        let c = 3;
        let d = 16;
        Self {
            class_names: ["short", "medium", "long"].iter().map(|s| s.to_string()).collect(),
            mean_durations: vec![0.3, 1.0, 4.0],
            transitions: uniform_transitions(c),
            dispersion: Some(8.0),
            emission_means: random_emission_means(c, d, 0.25, seed),
            onset_fraction: 0.25,
            length_range: (1500, 2500),
            ..Self::stroke_like(seed)
        }
    }

    pub fn profile(name: &str, seed: u64) -> Result<Self> {
        match name {
            STROKE_LIKE => Ok(Self::stroke_like(seed)),
            MIXED_DURATION => Ok(Self::mixed_duration(seed)),
            other => Err(Error::Config(format!("unknown generator profile {other:?}"))),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.class_names.len();
        let bad = |m: String| Err(Error::Config(m));
        if c == 0 {
            return bad("no classes".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad(format!("frame_rate {}", self.frame_rate));
        }
        if self.transitions.len() != c || self.transitions.iter().any(|r| r.len() != c) {
            return bad("transition matrix must be c x c".into());
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row[i] != 0.0 && c > 1 {
                return bad(format!("self-transition for class {i}"));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("transition row {i} has entries outside [0, 1]"));
            }
            if c > 1 && (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("transition row {i} does not sum to 1"));
            }
        }
        if self.mean_durations.len() != c || self.mean_durations.iter().any(|d| !(*d > 0.0)) {
            return bad("mean_durations must be c positive values".into());
        }
        if self.dispersion.is_some_and(|r| !(r > 0.0)) {
            return bad("dispersion must be positive".into());
        }
        if self.min_duration_frames == 0 {
            return bad("min_duration_frames must be at least 1".into());
        }
        if self.emission_means.len() != c
            || self.emission_means.iter().any(|m| m.len() != self.feature_dim)
        {
            return bad("emission_means must be c x D".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.onset_fraction) {
            return bad(format!("onset_fraction {}", self.onset_fraction));
        }
        if self.length_range.0 == 0 || self.length_range.0 > self.length_range.1 {
            return bad(format!("length_range {:?}", self.length_range));
        }
        if self.groups == 0 {
            return bad("groups must be positive".into());
        }
        Ok(())
    }
}

pub fn uniform_transitions(c: usize) -> Vec<Vec<f64>> {
    (0..c)
        .map(|i| {
            (0..c)
                .map(|j| if i == j || c == 1 { 0.0 } else { 1.0 / (c - 1) as f64 })
                .collect()
        })
        .collect()
}

/// `c x d` means with i.i.d. `N(0, scale^2)` entries.
pub fn random_emission_means(c: usize, d: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::derived(seed, u64::MAX);
    (0..c)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    scale * z
                })
                .collect()
        })
        .collect()
}

fn sample_duration(cfg: &GeneratorConfig, class: usize, r: &mut Rng) -> Result<usize> {
    let mean_frames = cfg.mean_durations[class] * cfg.frame_rate;
    let extra_mean = (mean_frames - cfg.min_duration_frames as f64).max(0.0);
    let extra = match cfg.dispersion {
        None => extra_mean.round() as usize,
        Some(_) if extra_mean == 0.0 => 0,
        Some(shape) => {
            let gamma = Gamma::new(shape, extra_mean / shape)
                .map_err(|e| Error::Config(format!("duration law: {e}")))?;
            let lambda: f64 = gamma.sample(r);
            if lambda <= 0.0 {
                0
            } else {
                Poisson::new(lambda)
                    .map_err(|e| Error::Config(format!("duration law: {e}")))?
                    .sample(r) as usize
            }
        }
    };
    Ok(cfg.min_duration_frames + extra)
}

fn sample_labels(cfg: &GeneratorConfig, r: &mut Rng) -> Result<Vec<usize>> {
    let c = cfg.num_classes();
    let target = r.random_range(cfg.length_range.0..=cfg.length_range.1);
    let mut labels = Vec::with_capacity(target + 64);
    let mut class = r.random_range(0..c);
    while labels.len() < target {
        let n = sample_duration(cfg, class, r)?;
        labels.extend(std::iter::repeat_n(class, n));
        if c > 1 {
            let u: f64 = r.random();
            let row = &cfg.transitions[class];
            let mut acc = 0.0;
            let mut next = row.iter().rposition(|&p| p > 0.0).unwrap_or(0);
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            class = next;
        }
    }
    Ok(labels)
}

fn emit(cfg: &GeneratorConfig, labels: &[usize], r: &mut Rng) -> Result<Vec<f64>> {
    let d = cfg.feature_dim;
    let t_len = labels.len();
    let k = cfg.crossfade;
    let mut out = vec![0.0; t_len * d];
    let before = k / 2;
    let after = k.saturating_sub(1) - before.min(k.saturating_sub(1));
    for t in 0..t_len {
        let row = &mut out[t * d..(t + 1) * d];
        if k <= 1 {
            row.copy_from_slice(&cfg.emission_means[labels[t]]);
            continue;
        }
        let lo = t.saturating_sub(before);
        let hi = (t + after).min(t_len - 1);
        for &l in &labels[lo..=hi] {
            for (o, m) in row.iter_mut().zip(&cfg.emission_means[l]) {
                *o += m;
            }
        }
        let n = (hi - lo + 1) as f64;
        row.iter_mut().for_each(|o| *o /= n);
    }
    if cfg.onset_fraction > 0.0 {
        let segments = segments_from_labels(labels);
        for pair in segments.segments().windows(2) {
            let (prev, cur) = (&cfg.emission_means[pair[0].class], &cfg.emission_means[pair[1].class]);
            let w = ((cfg.onset_fraction * pair[1].len() as f64).round() as usize).min(pair[1].len());
            for j in 0..w {
                let a = (j + 1) as f64 / (w + 1) as f64;
                let t = pair[1].start + j;
                for ((o, p), c) in out[t * d..(t + 1) * d].iter_mut().zip(prev).zip(cur) {
                    *o = (1.0 - a) * p + a * c;
                }
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma)
            .map_err(|e| Error::Config(format!("noise: {e}")))?;
        for v in &mut out {
            *v += normal.sample(r);
        }
    }
    Ok(out)
}

pub fn generate_one(cfg: &GeneratorConfig, index: usize) -> Result<LabeledSample> {
    let mut r = rng::derived(cfg.seed, index as u64);
    let labels = sample_labels(cfg, &mut r)?;
    let frames = emit(cfg, &labels, &mut r)?;
    let mut features = FeatureSequence::new(frames, cfg.feature_dim, cfg.frame_rate)?;
    let group = format!("g{:02}", index % cfg.groups);
    features.metadata.insert("group".into(), group);
    features.metadata.insert("generator".into(), "semi-markov".into());
    let frame_labels = FrameLabeling::new(labels, cfg.frame_rate)?;
    LabeledSample::new(format!("s{index:04}"), features, frame_labels)
}

pub fn generate(cfg: &GeneratorConfig, n: usize) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    (0..n).map(|i| generate_one(cfg, i)).collect()
}

/// Per-channel standardization with population standard deviation;
/// constant channels become 0.
pub fn normalize_per_sample(x: &FeatureSequence) -> Result<FeatureSequence> {
    let t_len = x.len();
    if t_len < 2 {
        return Err(Error::Shape(format!("normalization needs 2 frames, got {t_len}")));
    }
    let d = x.dim();
    let mut mean = vec![0.0; d];
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t_len as f64);
    let mut var = vec![0.0; d];
    for row in x.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let sd: Vec<f64> = var.iter().map(|s| (s / t_len as f64).sqrt()).collect();
    let data = x
        .rows()
        .flat_map(|row| {
            row.iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), s)| if *s > 0.0 { (v - m) / s } else { 0.0 })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut out = FeatureSequence::new(data, d, x.frame_rate)?;
    out.metadata = x.metadata.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{collapse, segments_from_frames};

    #[test]
    fn noiseless_features_equal_class_means() {
        let mut cfg = GeneratorConfig::stroke_like(3);
        cfg.noise_sigma = 0.0;
        cfg.crossfade = 0;
        for s in generate(&cfg, 3).unwrap() {
            for (t, &l) in s.frame_labels.labels.iter().enumerate() {
                assert_eq!(s.features.row(t), cfg.emission_means[l].as_slice());
            }
        }
    }

    #[test]
    fn degenerate_chain_alternates() {
        let mut cfg = GeneratorConfig::stroke_like(1);
        cfg.class_names.truncate(2);
        cfg.transitions = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        cfg.mean_durations = vec![0.05, 0.05];
        cfg.dispersion = None;
        cfg.emission_means.truncate(2);
        cfg.length_range = (50, 50);
        let s = generate_one(&cfg, 0).unwrap();
        let segs = segments_from_frames(&s.frame_labels);
        assert!(segs.segments().iter().all(|g| g.len() == 5));
        let seq = collapse(&s.frame_labels);
        assert!(seq.items().windows(2).all(|w| w[0] != w[1]));
        assert_eq!(seq.len(), 10);
    }

    #[test]
    fn onsets_ramp_from_the_previous_mean() {
        let mut cfg = GeneratorConfig::stroke_like(1);
        cfg.class_names.truncate(2);
        cfg.transitions = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        cfg.mean_durations = vec![0.1, 0.1];
        cfg.dispersion = None;
        cfg.emission_means = vec![vec![0.0; 16], vec![3.0; 16]];
        cfg.noise_sigma = 0.0;
        cfg.crossfade = 0;
        cfg.onset_fraction = 0.5;
        cfg.length_range = (30, 30);
        let s = generate_one(&cfg, 0).unwrap();
        let segs = segments_from_frames(&s.frame_labels);
        let second = &segs.segments()[1];
        let (from, to) = (segs.segments()[0].class, second.class);
        // 10-frame segment: 5 ramp frames at 1/6 .. 5/6, then the class mean
        for j in 0..10 {
            let a = if j < 5 { (j + 1) as f64 / 6.0 } else { 1.0 };
            let want = (1.0 - a) * cfg.emission_means[from][0] + a * cfg.emission_means[to][0];
            assert!((s.features.row(second.start + j)[0] - want).abs() < 1e-12);
        }
        // the first segment has no predecessor
        assert!(s.features.row(0).iter().all(|&v| v == cfg.emission_means[segs.segments()[0].class][0]));
        cfg.onset_fraction = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn profiles_are_valid() {
        for name in PROFILES {
            let cfg = GeneratorConfig::profile(name, 4).unwrap();
            cfg.validate().unwrap();
        }
        assert!(GeneratorConfig::profile("nope", 4).is_err());
    }

    #[test]
    fn mean_durations_match_configuration() {
        let cfg = GeneratorConfig::stroke_like(11);
        let mut totals = vec![(0usize, 0usize); 5];
        let mut i = 0;
        while totals.iter().map(|t| t.1).min().unwrap() < 1000 {
            let s = generate_one(&cfg, i).unwrap();
            let segs = segments_from_frames(&s.frame_labels);
            // the final segment is complete as well
            for g in segs.segments() {
                totals[g.class].0 += g.len();
                totals[g.class].1 += 1;
            }
            i += 1;
        }
        for (c, (frames, n)) in totals.iter().enumerate() {
            let mean_s = *frames as f64 / *n as f64 / cfg.frame_rate;
            let want = cfg.mean_durations[c];
            assert!((mean_s - want).abs() / want < 0.10, "class {c}: {mean_s} vs {want}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = GeneratorConfig::stroke_like(5);
        let a = generate(&cfg, 4).unwrap();
        let b = generate(&cfg, 4).unwrap();
        assert_eq!(a, b);
        let other = generate(&GeneratorConfig::stroke_like(6), 1).unwrap();
        assert_ne!(a[0].frame_labels, other[0].frame_labels);
        for s in &a {
            assert_eq!(s.sequence(), &collapse(&s.frame_labels));
            assert!(s.len() >= cfg.length_range.0);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = GeneratorConfig::stroke_like(0);
        cfg.transitions[0][0] = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = GeneratorConfig::stroke_like(0);
        cfg.transitions[1][2] += 0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = GeneratorConfig::stroke_like(0);
        cfg.mean_durations[0] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = GeneratorConfig::stroke_like(0);
        cfg.noise_sigma = -1.0;
        assert!(generate(&cfg, 1).is_err());
    }

    #[test]
    fn normalization() {
        let x = FeatureSequence::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]], 10.0).unwrap();
        let n = normalize_per_sample(&x).unwrap();
        let s = 1.5f64.sqrt();
        let want = [-s, 0.0, 0.0, 0.0, s, 0.0];
        for (a, b) in n.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((n.row(0)[0] + 1.2247).abs() < 1e-4);
        let again = normalize_per_sample(&n).unwrap();
        for (a, b) in again.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let one = FeatureSequence::from_rows(&[vec![1.0]], 10.0).unwrap();
        assert!(normalize_per_sample(&one).is_err());
    }
}
