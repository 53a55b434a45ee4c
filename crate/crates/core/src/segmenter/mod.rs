//! Multi-stage dilated temporal-convolution frame classifier.
//!
//! Each stage is a 1x1 input projection, `layers_per_stage` residual blocks
//! `x + conv1x1(dropout(relu(conv_k(x, dilation 2^l))))` and a 1x1
//! projection to `c` logits. Stage 1 reads the features; every later stage
//! reads the softmax of the previous stage. An optional boundary head maps
//! the first stage's final features to one logit per frame.

mod refine;
mod train;

pub use refine::{boundary_refine, detect_boundaries, smooth_refine, Refinement};
pub use train::{evaluate_segmenter, median_frequency_weights, train_segmenter, TrainedSegmenter};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::Conv1d;
use crate::numerics::{argmax, rng, BoundParams, Checkpoint, ParamStore, Rng, Tape, Tensor, Var};
use crate::sequence::{boundaries_of_labels, ClassId, FeatureSequence, FrameLabeling};

pub const SEGMENTER_KIND: &str = "segmenter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    pub stages: usize,
    pub layers_per_stage: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub boundary_head: bool,
    pub lambda_boundary: f64,
    /// Per-class loss weights; `None` means inverse median frequency on the
    /// training split, filled in by training.
    pub class_weights: Option<Vec<f64>>,
    /// Boundary targets cover `boundary +- boundary_widen` frames.
    pub boundary_widen: usize,
    /// Loss weight of positive boundary frames; `None` balances positives
    /// against negatives within each sequence.
    pub boundary_pos_weight: Option<f64>,
    pub smoothing_window: usize,
    pub boundary_threshold: f64,
    pub nms_radius: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            num_classes: 5,
            stages: 2,
            layers_per_stage: 6,
            channels: 32,
            kernel: 3,
            dropout: 0.1,
            boundary_head: true,
            lambda_boundary: 0.5,
            class_weights: None,
            boundary_widen: 2,
            boundary_pos_weight: None,
            smoothing_window: 15,
            boundary_threshold: 0.5,
            nms_radius: 5,
        }
    }
}

impl SegmenterConfig {
    /// The refinement named `none`, `smoothing` or `boundary`, with this
    /// configuration's window, threshold and suppression radius.
    pub fn refinement(&self, name: &str) -> Result<Refinement> {
        match name {
            "none" | "baseline" => Ok(Refinement::None),
            "smoothing" | "smooth" => Ok(Refinement::Smoothing {
                window: self.smoothing_window,
            }),
            "boundary" => Ok(Refinement::Boundary {
                threshold: self.boundary_threshold,
                nms_radius: self.nms_radius,
            }),
            other => Err(Error::Config(format!("unknown refinement {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.num_classes == 0 || self.channels == 0 {
            return bad("input_dim, num_classes and channels must be positive".into());
        }
        if self.stages == 0 || self.layers_per_stage == 0 {
            return bad("stages and layers_per_stage must be positive".into());
        }
        if self.layers_per_stage > 20 {
            return bad(format!("{} layers would overflow the dilation", self.layers_per_stage));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        if !(self.lambda_boundary >= 0.0) {
            return bad(format!("lambda_boundary {}", self.lambda_boundary));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.num_classes || w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return bad("class_weights must be num_classes non-negative values".into());
            }
        }
        if self.boundary_pos_weight.is_some_and(|w| !(w > 0.0 && w.is_finite())) {
            return bad("boundary_pos_weight must be positive".into());
        }
        if self.smoothing_window % 2 == 0 {
            return bad(format!("smoothing_window {} must be odd", self.smoothing_window));
        }
        if !(self.boundary_threshold > 0.0 && self.boundary_threshold < 1.0) {
            return bad(format!("boundary_threshold {}", self.boundary_threshold));
        }
        Ok(())
    }
}

/// Per-frame class probabilities (`T x c`, rows on the simplex) and optional
/// boundary probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameProbs {
    probs: Vec<f64>,
    classes: usize,
    boundary: Option<Vec<f64>>,
    pub frame_rate: f64,
}

impl FrameProbs {
    pub fn new(probs: Vec<f64>, classes: usize, boundary: Option<Vec<f64>>, frame_rate: f64) -> Result<Self> {
        if classes == 0 || probs.len() % classes != 0 {
            return Err(Error::Shape(format!("{} values for {classes} classes", probs.len())));
        }
        let t_len = probs.len() / classes;
        for (t, row) in probs.chunks_exact(classes).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::Format(format!("frame {t} probabilities sum to {s}")));
            }
        }
        if let Some(b) = &boundary {
            if b.len() != t_len {
                return Err(Error::Shape(format!("{} boundary values for {t_len} frames", b.len())));
            }
            if b.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Format("boundary probability outside [0, 1]".into()));
            }
        }
        Ok(Self {
            probs,
            classes,
            boundary,
            frame_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn data(&self) -> &[f64] {
        &self.probs
    }

    pub fn boundary(&self) -> Option<&[f64]> {
        self.boundary.as_deref()
    }

    pub fn argmax_labels(&self) -> FrameLabeling {
        let labels = self.probs.chunks_exact(self.classes).map(argmax).collect();
        FrameLabeling {
            labels,
            frame_rate: self.frame_rate,
        }
    }

    /// The probabilities (and boundary column, if any) as model input.
    pub fn to_features(&self, with_boundary: bool) -> Result<FeatureSequence> {
        match (&self.boundary, with_boundary) {
            (Some(b), true) => {
                let dim = self.classes + 1;
                let mut data = Vec::with_capacity(self.len() * dim);
                for (row, bt) in self.probs.chunks_exact(self.classes).zip(b) {
                    data.extend_from_slice(row);
                    data.push(*bt);
                }
                FeatureSequence::new(data, dim, self.frame_rate)
            }
            (None, true) => Err(Error::Config("frame probabilities carry no boundary column".into())),
            _ => FeatureSequence::new(self.probs.clone(), self.classes, self.frame_rate),
        }
    }
}

#[derive(Clone)]
struct Stage {
    input: Conv1d,
    layers: Vec<(Conv1d, Conv1d)>,
    output: Conv1d,
}

/// Model configuration plus parameters.
#[derive(Clone)]
pub struct Segmenter {
    pub config: SegmenterConfig,
    pub params: ParamStore,
    stages: Vec<Stage>,
    boundary: Option<Conv1d>,
}

/// Tape handles of one forward pass.
pub struct SegmenterOutput {
    pub stage_logits: Vec<Var>,
    pub boundary_logits: Option<Var>,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::derived(seed, 0x5e6);
        let mut params = ParamStore::new();
        let (ch, c, k) = (config.channels, config.num_classes, config.kernel);
        let mut stages = Vec::with_capacity(config.stages);
        for s in 0..config.stages {
            let in_dim = if s == 0 { config.input_dim } else { c };
            let input = Conv1d::register(&mut params, &format!("stage{s}.in"), 1, in_dim, ch, 1, &mut r)?;
            let layers = (0..config.layers_per_stage)
                .map(|l| {
                    let name = format!("stage{s}.layer{l}");
                    let dil = Conv1d::register(&mut params, &format!("{name}.dilated"), k, ch, ch, 1 << l, &mut r)?;
                    let mix = Conv1d::register(&mut params, &format!("{name}.mix"), 1, ch, ch, 1, &mut r)?;
                    Ok((dil, mix))
                })
                .collect::<Result<Vec<_>>>()?;
            let output = Conv1d::register(&mut params, &format!("stage{s}.out"), 1, ch, c, 1, &mut r)?;
            stages.push(Stage { input, layers, output });
        }
        let boundary = if config.boundary_head {
            Some(Conv1d::register(&mut params, "boundary", 1, ch, 1, 1, &mut r)?)
        } else {
            None
        };
        Ok(Self {
            config,
            params,
            stages,
            boundary,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.check_version()?;
        let kind = ck.config.get("kind").and_then(|k| k.as_str());
        if kind != Some(SEGMENTER_KIND) {
            return Err(Error::Format(format!("checkpoint kind {kind:?} is not {SEGMENTER_KIND:?}")));
        }
        let config: SegmenterConfig = serde_json::from_value(ck.config["model"].clone())?;
        let mut model = Self::new(config, 0)?;
        let loaded = ParamStore::from_checkpoint(ck)?;
        if !loaded.same_layout(&model.params) {
            return Err(Error::Format("checkpoint parameters do not match the configuration".into()));
        }
        model.params = loaded;
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = serde_json::json!({
            "kind": SEGMENTER_KIND,
            "model": self.config,
        });
        self.params.to_checkpoint(config)
    }

    /// Forward pass on `x: [T, D]`. Dropout is active only with an rng.
    pub fn forward(&self, t: &Tape, p: &BoundParams, x: Var, mut rng: Option<&mut Rng>) -> Result<SegmenterOutput> {
        let shape = t.shape(x);
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::Shape(format!(
                "segmenter input {shape:?}, expected [T, {}]",
                self.config.input_dim
            )));
        }
        let mut stage_logits = Vec::with_capacity(self.stages.len());
        let mut boundary_logits = None;
        let mut input = x;
        for (s, stage) in self.stages.iter().enumerate() {
            let mut h = stage.input.apply(t, p, input)?;
            for (dil, mix) in &stage.layers {
                let mut out = mix.apply(t, p, t.relu(dil.apply(t, p, h)?)?)?;
                if let Some(r) = rng.as_deref_mut() {
                    out = t.dropout(out, self.config.dropout, r)?;
                }
                h = t.add(h, out)?;
            }
            if s == 0 {
                if let Some(b) = &self.boundary {
                    let z = b.apply(t, p, h)?;
                    let len = t.shape(z)[0];
                    boundary_logits = Some(t.reshape(z, &[len])?);
                }
            }
            let logits = stage.output.apply(t, p, h)?;
            stage_logits.push(logits);
            input = t.softmax(logits, 1)?;
        }
        Ok(SegmenterOutput {
            stage_logits,
            boundary_logits,
        })
    }

    /// Final-stage probabilities for one sequence.
    pub fn predict(&self, x: &FeatureSequence) -> Result<FrameProbs> {
        self.predict_stages(x).map(|mut v| v.pop().expect("at least one stage"))
    }

    /// Probabilities of every stage, first to last. Only the last carries
    /// boundary probabilities.
    pub fn predict_stages(&self, x: &FeatureSequence) -> Result<Vec<FrameProbs>> {
        let t = Tape::new();
        let p = self.params.bind_with(&t, false)?;
        let xv = t.constant(Tensor::matrix(x.len(), x.dim(), x.data().to_vec())?)?;
        let out = self.forward(&t, &p, xv, None)?;
        let boundary = match out.boundary_logits {
            Some(b) => Some(t.value(t.sigmoid(b)?).data().to_vec()),
            None => None,
        };
        let n = out.stage_logits.len();
        out.stage_logits
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let probs = t.value(t.softmax(l, 1)?).data().to_vec();
                let b = if i + 1 == n { boundary.clone() } else { None };
                FrameProbs::new(probs, self.config.num_classes, b, x.frame_rate)
            })
            .collect()
    }
}

/// `1` on frames within `widen` of a label change, else `0`.
pub fn boundary_targets(labels: &[ClassId], widen: usize) -> Vec<f64> {
    let mut y = vec![0.0; labels.len()];
    for b in boundaries_of_labels(labels) {
        let lo = b.saturating_sub(widen);
        let hi = (b + widen).min(labels.len() - 1);
        y[lo..=hi].iter_mut().for_each(|v| *v = 1.0);
    }
    y
}

/// Sum over stages of the weighted frame cross-entropy (normalized by the
/// total weight of the targets), plus `lambda_boundary` times the
/// weighted mean boundary binary cross-entropy.
pub fn segmenter_loss(
    t: &Tape,
    out: &SegmenterOutput,
    labels: &[ClassId],
    config: &SegmenterConfig,
) -> Result<Var> {
    let unit;
    let weights: &[f64] = match &config.class_weights {
        Some(w) => w,
        None => {
            unit = vec![1.0; config.num_classes];
            &unit
        }
    };
    let norm: f64 = labels
        .iter()
        .map(|&l| weights.get(l).copied().unwrap_or(0.0))
        .sum();
    if !(norm > 0.0) {
        return Err(Error::Config("all target frames have zero class weight".into()));
    }
    let mut total: Option<Var> = None;
    for &logits in &out.stage_logits {
        if t.shape(logits)[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} frames of logits for {} labels",
                t.shape(logits)[0],
                labels.len()
            )));
        }
        let ce = t.scale(t.cross_entropy(logits, labels, Some(weights))?, 1.0 / norm)?;
        total = Some(match total {
            Some(acc) => t.add(acc, ce)?,
            None => ce,
        });
    }
    let mut total = total.ok_or_else(|| Error::Config("no stages".into()))?;
    if let (Some(b), true) = (out.boundary_logits, config.lambda_boundary > 0.0) {
        let y = boundary_targets(labels, config.boundary_widen);
        let pos = y.iter().filter(|&&v| v > 0.5).count();
        let w_pos = match config.boundary_pos_weight {
            Some(w) => w,
            None if pos > 0 && pos < y.len() => (y.len() - pos) as f64 / pos as f64,
            None => 1.0,
        };
        let w: Vec<f64> = y.iter().map(|&v| if v > 0.5 { w_pos } else { 1.0 }).collect();
        let w_sum: f64 = w.iter().sum();
        let bce = t.bce_with_logits(b, &y, Some(&w))?;
        total = t.add(total, t.scale(bce, config.lambda_boundary / w_sum)?)?;
    }
    Ok(total)
}
