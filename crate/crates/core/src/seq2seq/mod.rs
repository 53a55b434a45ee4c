//! Encoder-decoder model mapping a window of frames directly to an action
//! sequence.
//!
//! The encoder turns `[W, D]` inputs into per-frame states and a fixed-size
//! summary `h`. The decoder state starts at `tanh(h A + a)`; each step feeds
//! `[embed(prev); h]` through a GRU, attends over the encoder states with
//! the projected state as query, and maps `relu([s; h; context] W1 + b1)`
//! to `c + 1` logits, the last one for end-of-sequence.
//!
//! Token ids follow [`LabelVocab`](crate::sequence::LabelVocab): classes
//! `0..c`, start-of-sequence `c`, end-of-sequence `c + 1`. Distribution
//! slot `c` is end-of-sequence.

mod decode;
mod train;
mod window;

pub use decode::{ensemble_decode, greedy_decode, DecodeTrace};
pub use train::{evaluate_seq2seq, train_seq2seq, TrainedSeq2Seq};
pub use window::{stitch, training_windows, window_input, windowed_infer, windowed_infer_ensemble, WindowSpec};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::{gru_step, multi_head_attention, Conv1d, GruParams, GruVars, Linear};
use crate::numerics::{argmax, rng, BoundParams, Checkpoint, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::sequence::ClassId;

pub const SEQ2SEQ_KIND: &str = "seq2seq";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Feature frames (raw2seq).
    Raw,
    /// Frame probabilities of a trained segmenter (seg2seq).
    Probs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Bidirectional GRU; `h` joins the last forward and first backward state.
    BiGru,
    /// Dilated residual convolutions; `h` is the time average of the states.
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ramp {
    #[default]
    Linear,
}

/// Probability of feeding the model's own previous prediction, ramped from
/// `start` at the first epoch to `end` at the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub ramp: Ramp,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.0,
            end: 0.5,
            ramp: Ramp::Linear,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.end) || self.end < self.start {
            return Err(Error::Config(format!(
                "epsilon schedule {} -> {} must be non-decreasing in [0, 1]",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn value(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.start;
        }
        let f = epoch.min(epochs - 1) as f64 / (epochs - 1) as f64;
        match self.ramp {
            Ramp::Linear => self.start + (self.end - self.start) * f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqConfig {
    pub input_kind: InputKind,
    pub encoder: EncoderKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Per-direction state size for the GRU encoder, channels for the
    /// convolutional one.
    pub encoder_hidden: usize,
    /// Residual layers of the convolutional encoder (dilation `2^l`).
    pub encoder_layers: usize,
    pub decoder_hidden: usize,
    /// Token embedding size; `None` means `decoder_hidden / 4`.
    pub embed_dim: Option<usize>,
    pub attention: bool,
    pub heads: usize,
    pub max_decode_len: usize,
    /// Weight of the auxiliary per-frame cross-entropy on encoder states.
    pub aux_weight: f64,
    pub dropout: f64,
    /// Append the segmenter's boundary probability to seg2seq inputs.
    pub include_boundary: bool,
    pub window: WindowSpec,
    pub epsilon: EpsilonSchedule,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            input_kind: InputKind::Raw,
            encoder: EncoderKind::BiGru,
            input_dim: 16,
            num_classes: 5,
            encoder_hidden: 64,
            encoder_layers: 5,
            decoder_hidden: 128,
            embed_dim: None,
            attention: true,
            heads: 1,
            max_decode_len: 32,
            aux_weight: 1.0,
            dropout: 0.1,
            include_boundary: false,
            window: WindowSpec::default(),
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl Seq2SeqConfig {
    pub fn embed_dim(&self) -> usize {
        self.embed_dim.unwrap_or((self.decoder_hidden / 4).max(1))
    }

    /// Size of `h` and of each per-frame encoder state.
    pub fn encoder_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::BiGru => 2 * self.encoder_hidden,
            EncoderKind::Conv => self.encoder_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.num_classes == 0 || self.encoder_hidden == 0 || self.decoder_hidden == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.embed_dim() == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.max_decode_len == 0 {
            return bad("max_decode_len must be at least 1".into());
        }
        if self.encoder == EncoderKind::Conv && !(1..=20).contains(&self.encoder_layers) {
            return bad(format!("encoder_layers {}", self.encoder_layers));
        }
        if self.heads == 0 || (self.attention && self.encoder_dim() % self.heads != 0) {
            return bad(format!("{} heads for encoder dim {}", self.heads, self.encoder_dim()));
        }
        if !(self.aux_weight >= 0.0) {
            return bad(format!("aux_weight {}", self.aux_weight));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        self.window.validate()?;
        self.epsilon.validate()
    }
}

#[derive(Clone)]
enum EncoderIds {
    BiGru { fwd: GruParams, bwd: GruParams },
    Conv { input: Conv1d, layers: Vec<(Conv1d, Conv1d)> },
}

#[derive(Clone)]
struct Layout {
    encoder: EncoderIds,
    init: Linear,
    embed: ParamId,
    gru: GruParams,
    query: Option<Linear>,
    hidden: Linear,
    out: Linear,
    aux: Option<Linear>,
}

#[derive(Clone)]
pub struct Seq2Seq {
    pub config: Seq2SeqConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// Encoder output: summary `h: [E]` and per-frame states `[W, E]`.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub h: Var,
    pub states: Var,
}

/// Per-window quantities the decoder reuses at every step.
pub struct DecoderContext {
    pub encoded: Encoded,
    /// Initial decoder state `s_0`.
    pub s0: Var,
    gru: GruVars,
    token_proj: Var,
    h_proj: Var,
    mlp_s: Var,
    mlp_ctx: Option<Var>,
    mlp_h: Var,
    query: Option<(Var, Var)>,
    out: (Var, Var),
}

pub struct DecodeStep {
    pub state: Var,
    /// Unnormalized scores over the `c + 1` slots.
    pub logits: Var,
    pub attention: Option<Var>,
}

impl Seq2Seq {
    pub fn new(config: Seq2SeqConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::derived(seed, 0x5e9);
        let mut ps = ParamStore::new();
        let (d, c) = (config.input_dim, config.num_classes);
        let (he, hd, e) = (config.encoder_hidden, config.decoder_hidden, config.embed_dim());
        let enc_dim = config.encoder_dim();
        let encoder = match config.encoder {
            EncoderKind::BiGru => EncoderIds::BiGru {
                fwd: GruParams::register(&mut ps, "encoder.fwd", d, he, &mut r)?,
                bwd: GruParams::register(&mut ps, "encoder.bwd", d, he, &mut r)?,
            },
            EncoderKind::Conv => {
                let input = Conv1d::register(&mut ps, "encoder.in", 1, d, he, 1, &mut r)?;
                let layers = (0..config.encoder_layers)
                    .map(|l| {
                        let dil = Conv1d::register(&mut ps, &format!("encoder.layer{l}.dilated"), 3, he, he, 1 << l, &mut r)?;
                        let mix = Conv1d::register(&mut ps, &format!("encoder.layer{l}.mix"), 1, he, he, 1, &mut r)?;
                        Ok((dil, mix))
                    })
                    .collect::<Result<Vec<_>>>()?;
                EncoderIds::Conv { input, layers }
            }
        };
        let init = Linear::register(&mut ps, "decoder.init", enc_dim, hd, &mut r)?;
        let embed = ps.add_uniform("decoder.embed", &[c + 2, e], 1, &mut r)?;
        let gru = GruParams::register(&mut ps, "decoder.gru", e + enc_dim, hd, &mut r)?;
        let query = if config.attention {
            Some(Linear::register(&mut ps, "decoder.query", hd, enc_dim, &mut r)?)
        } else {
            None
        };
        let mlp_in = hd + enc_dim + if config.attention { enc_dim } else { 0 };
        let hidden = Linear::register(&mut ps, "decoder.mlp", mlp_in, hd, &mut r)?;
        let out = Linear::register(&mut ps, "decoder.out", hd, c + 1, &mut r)?;
        let aux = if config.aux_weight > 0.0 {
            Some(Linear::register(&mut ps, "aux.frame", enc_dim, c, &mut r)?)
        } else {
            None
        };
        Ok(Self {
            config,
            params: ps,
            layout: Layout {
                encoder,
                init,
                embed,
                gru,
                query,
                hidden,
                out,
                aux,
            },
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.check_version()?;
        let kind = ck.config.get("kind").and_then(|k| k.as_str());
        if kind != Some(SEQ2SEQ_KIND) {
            return Err(Error::Format(format!("checkpoint kind {kind:?} is not {SEQ2SEQ_KIND:?}")));
        }
        let config: Seq2SeqConfig = serde_json::from_value(ck.config["model"].clone())?;
        let mut model = Self::new(config, 0)?;
        let loaded = ParamStore::from_checkpoint(ck)?;
        if !loaded.same_layout(&model.params) {
            return Err(Error::Format("checkpoint parameters do not match the configuration".into()));
        }
        model.params = loaded;
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.params.to_checkpoint(serde_json::json!({
            "kind": SEQ2SEQ_KIND,
            "model": self.config,
        }))
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Slot of the end-of-sequence entry in each distribution.
    pub fn eos_slot(&self) -> usize {
        self.config.num_classes
    }

    pub fn sos_token(&self) -> usize {
        self.config.num_classes
    }

    /// Token fed back after emitting distribution slot `slot`.
    pub fn token_of_slot(&self, slot: usize) -> usize {
        if slot == self.eos_slot() {
            self.config.num_classes + 1
        } else {
            slot
        }
    }

    pub fn encode(&self, t: &Tape, p: &BoundParams, x: Var, mut rng: Option<&mut Rng>) -> Result<Encoded> {
        let shape = t.shape(x);
        if shape.len() != 2 || shape[1] != self.config.input_dim || shape[0] == 0 {
            return Err(Error::Shape(format!(
                "encoder input {shape:?}, expected [W > 0, {}]",
                self.config.input_dim
            )));
        }
        let len = shape[0];
        match &self.layout.encoder {
            EncoderIds::BiGru { fwd, bwd } => {
                let run = |g: &GruParams, reverse: bool| -> Result<Vec<Var>> {
                    let vars = g.vars(p);
                    let proj = t.add(t.matmul(x, vars.w_x)?, vars.b_x)?;
                    let mut s = t.constant(Tensor::zeros(&[g.hidden]))?;
                    let mut out = vec![s; len];
                    for i in 0..len {
                        let f = if reverse { len - 1 - i } else { i };
                        s = gru_step(t, t.row(proj, f)?, s, &vars)?;
                        out[f] = s;
                    }
                    Ok(out)
                };
                let f = run(fwd, false)?;
                let b = run(bwd, true)?;
                let h = t.concat(&[f[len - 1], b[0]], 0)?;
                let rows = f
                    .iter()
                    .zip(&b)
                    .map(|(a, c)| t.concat(&[*a, *c], 0))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Encoded {
                    h,
                    states: t.stack_rows(&rows)?,
                })
            }
            EncoderIds::Conv { input, layers } => {
                let mut s = input.apply(t, p, x)?;
                for (dil, mix) in layers {
                    let mut out = mix.apply(t, p, t.relu(dil.apply(t, p, s)?)?)?;
                    if let Some(r) = rng.as_deref_mut() {
                        out = t.dropout(out, self.config.dropout, r)?;
                    }
                    s = t.add(s, out)?;
                }
                let avg = t.constant(Tensor::full(&[len], 1.0 / len as f64))?;
                Ok(Encoded {
                    h: t.matmul(avg, s)?,
                    states: s,
                })
            }
        }
    }

    /// Precomputes the step-invariant decoder terms for one window.
    pub fn decoder_context(&self, t: &Tape, p: &BoundParams, encoded: Encoded) -> Result<DecoderContext> {
        let l = &self.layout;
        let (e, hd, enc) = (self.config.embed_dim(), self.config.decoder_hidden, self.config.encoder_dim());
        let s0 = t.tanh(l.init.apply(t, p, encoded.h)?)?;
        let gru = l.gru.vars(p);
        let token_proj = t.matmul(p[l.embed], t.slice(gru.w_x, 0, 0, e)?)?;
        let h_proj = t.add(t.matmul(encoded.h, t.slice(gru.w_x, 0, e, e + enc)?)?, gru.b_x)?;
        let w1 = p[l.hidden.w];
        let mlp_s = t.slice(w1, 0, 0, hd)?;
        let mlp_h = t.add(t.matmul(encoded.h, t.slice(w1, 0, hd, hd + enc)?)?, p[l.hidden.b])?;
        let mlp_ctx = if self.config.attention {
            Some(t.slice(w1, 0, hd + enc, hd + 2 * enc)?)
        } else {
            None
        };
        Ok(DecoderContext {
            encoded,
            s0,
            gru,
            token_proj,
            h_proj,
            mlp_s,
            mlp_ctx,
            mlp_h,
            query: l.query.map(|q| (p[q.w], p[q.b])),
            out: (p[l.out.w], p[l.out.b]),
        })
    }

    /// One decoder update from `s_prev` given the previous token id
    /// (a class, start-of-sequence or end-of-sequence).
    pub fn decode_step(
        &self,
        t: &Tape,
        ctx: &DecoderContext,
        s_prev: Var,
        prev_token: usize,
        rng: Option<&mut Rng>,
    ) -> Result<DecodeStep> {
        if prev_token > self.config.num_classes + 1 {
            return Err(Error::Shape(format!(
                "token {prev_token} outside vocabulary of {} classes",
                self.config.num_classes
            )));
        }
        let x_proj = t.add(t.row(ctx.token_proj, prev_token)?, ctx.h_proj)?;
        let state = gru_step(t, x_proj, s_prev, &ctx.gru)?;
        let mut pre = t.add(t.matmul(state, ctx.mlp_s)?, ctx.mlp_h)?;
        let mut attention = None;
        if let (Some((qw, qb)), Some(w_ctx)) = (ctx.query, ctx.mlp_ctx) {
            let q = t.add(t.matmul(state, qw)?, qb)?;
            let states = ctx.encoded.states;
            let (context, weights) = multi_head_attention(t, q, states, states, self.config.heads)?;
            pre = t.add(pre, t.matmul(context, w_ctx)?)?;
            attention = Some(weights);
        }
        let mut z = t.relu(pre)?;
        if let Some(r) = rng {
            z = t.dropout(z, self.config.dropout, r)?;
        }
        let logits = t.add(t.matmul(z, ctx.out.0)?, ctx.out.1)?;
        Ok(DecodeStep {
            state,
            logits,
            attention,
        })
    }

    /// Auxiliary per-frame class logits `[W, c]`, when the head exists.
    pub fn frame_logits(&self, t: &Tape, p: &BoundParams, encoded: Encoded) -> Result<Option<Var>> {
        self.layout.aux.map(|a| a.apply(t, p, encoded.states)).transpose()
    }
}

/// Frame labels for the auxiliary loss: rows `offset..offset + labels.len()`
/// of the window.
#[derive(Debug, Clone, Copy)]
pub struct FrameTargets<'a> {
    pub offset: usize,
    pub labels: &'a [ClassId],
}

/// `-sum_i log p_i[y_i]` over the target slots (ending with the
/// end-of-sequence slot `c`), plus `aux_weight` times the mean frame
/// cross-entropy of the auxiliary head. With probability `epsilon` the
/// token fed at step `i` is the argmax of `p_{i-1}` instead of `y_{i-1}`.
/// Dropout is active when `dropout_rng` is given.
#[allow(clippy::too_many_arguments)]
pub fn seq2seq_loss(
    model: &Seq2Seq,
    t: &Tape,
    p: &BoundParams,
    x: Var,
    targets: &[usize],
    frames: Option<FrameTargets<'_>>,
    epsilon: f64,
    rng: &mut Rng,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<Var> {
    let c = model.num_classes();
    if targets.is_empty() {
        return Err(Error::Config("empty decoder target".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&y| y > c) {
        return Err(Error::Shape(format!("target slot {bad} outside {} slots", c + 1)));
    }
    let encoded = model.encode(t, p, x, dropout_rng.as_deref_mut())?;
    let ctx = model.decoder_context(t, p, encoded)?;
    let mut state = ctx.s0;
    let mut prev = model.sos_token();
    let mut logits = Vec::with_capacity(targets.len());
    for (i, &y) in targets.iter().enumerate() {
        let step = model.decode_step(t, &ctx, state, prev, dropout_rng.as_deref_mut())?;
        state = step.state;
        logits.push(step.logits);
        if i + 1 < targets.len() {
            let own = epsilon > 0.0 && rng.random::<f64>() < epsilon;
            prev = if own {
                model.token_of_slot(argmax(t.value(step.logits).data()))
            } else {
                model.token_of_slot(y)
            };
        }
    }
    let all = t.stack_rows(&logits)?;
    let mut loss = t.cross_entropy(all, targets, None)?;
    if let (Some(ft), Some(fl)) = (frames, model.frame_logits(t, p, encoded)?) {
        if !ft.labels.is_empty() && model.config.aux_weight > 0.0 {
            let rows = t.slice(fl, 0, ft.offset, ft.offset + ft.labels.len())?;
            let ce = t.cross_entropy(rows, ft.labels, None)?;
            let w = model.config.aux_weight / ft.labels.len() as f64;
            loss = t.add(loss, t.scale(ce, w)?)?;
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, GradCheck};

    pub(crate) fn tiny(encoder: EncoderKind) -> Seq2SeqConfig {
        Seq2SeqConfig {
            encoder,
            input_dim: 4,
            num_classes: 3,
            encoder_hidden: 4,
            encoder_layers: 2,
            decoder_hidden: 8,
            dropout: 0.0,
            aux_weight: 0.5,
            max_decode_len: 6,
            window: WindowSpec {
                window: 12,
                stride: 4,
                margin: 2,
            },
            ..Seq2SeqConfig::default()
        }
    }

    pub(crate) fn window(len: usize, d: usize, phase: f64) -> Tensor {
        let data = (0..len * d).map(|i| (i as f64 * 0.37 + phase).sin()).collect();
        Tensor::matrix(len, d, data).unwrap()
    }

    #[test]
    fn h_has_fixed_size() {
        for enc in [EncoderKind::BiGru, EncoderKind::Conv] {
            let m = Seq2Seq::new(tiny(enc), 1).unwrap();
            for len in [1, 5, 12] {
                let t = Tape::new();
                let p = m.params.bind_with(&t, false).unwrap();
                let x = t.constant(window(len, 4, 0.0)).unwrap();
                let e = m.encode(&t, &p, x, None).unwrap();
                assert_eq!(t.shape(e.h), vec![8usize >> (enc == EncoderKind::Conv) as u32]);
                assert_eq!(t.shape(e.states)[0], len);
            }
        }
    }

    #[test]
    fn zero_parameters_give_zero_summary() {
        for enc in [EncoderKind::BiGru, EncoderKind::Conv] {
            let mut m = Seq2Seq::new(tiny(enc), 1).unwrap();
            m.params.map_values(|_, v| v.data_mut().fill(0.0));
            let t = Tape::new();
            let p = m.params.bind_with(&t, false).unwrap();
            let x = t.constant(window(7, 4, 1.0)).unwrap();
            let e = m.encode(&t, &p, x, None).unwrap();
            assert!(t.value(e.h).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn step_distribution_is_on_the_simplex() {
        let m = Seq2Seq::new(tiny(EncoderKind::BiGru), 3).unwrap();
        let t = Tape::new();
        let p = m.params.bind_with(&t, false).unwrap();
        let x = t.constant(window(6, 4, 0.5)).unwrap();
        let ctx = m.decoder_context(&t, &p, m.encode(&t, &p, x, None).unwrap()).unwrap();
        let mut s = ctx.s0;
        for tok in [3, 0, 2, 4] {
            let step = m.decode_step(&t, &ctx, s, tok, None).unwrap();
            let probs = t.value(t.softmax(step.logits, 0).unwrap());
            assert_eq!(probs.numel(), 4);
            assert!((probs.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let w = t.value(step.attention.unwrap());
            assert!((w.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            s = step.state;
        }
        assert!(m.decode_step(&t, &ctx, s, 5, None).is_err());
    }

    #[test]
    fn teacher_forcing_and_reproducibility() {
        let m = Seq2Seq::new(tiny(EncoderKind::BiGru), 5).unwrap();
        let loss = |eps: f64, seed: u64| {
            let t = Tape::new();
            let p = m.params.bind_with(&t, false).unwrap();
            let x = t.constant(window(12, 4, 0.2)).unwrap();
            let mut r = rng::seeded(seed);
            let ft = FrameTargets {
                offset: 2,
                labels: &[0, 0, 1, 1, 1, 2, 2, 2],
            };
            let l = seq2seq_loss(&m, &t, &p, x, &[0, 1, 2, 3], Some(ft), eps, &mut r, None).unwrap();
            t.item(l)
        };
        assert_eq!(loss(0.0, 1), loss(0.0, 2));
        assert_eq!(loss(0.7, 4), loss(0.7, 4));
        assert_ne!(loss(1.0, 4), loss(0.0, 4));
    }

    #[test]
    fn empty_target_is_rejected() {
        let m = Seq2Seq::new(tiny(EncoderKind::Conv), 5).unwrap();
        let t = Tape::new();
        let p = m.params.bind_with(&t, false).unwrap();
        let x = t.constant(window(4, 4, 0.2)).unwrap();
        let mut r = rng::seeded(0);
        assert!(seq2seq_loss(&m, &t, &p, x, &[], None, 0.0, &mut r, None).is_err());
        assert!(seq2seq_loss(&m, &t, &p, x, &[4], None, 0.0, &mut r, None).is_err());
    }

    fn gradcheck(enc: EncoderKind) {
        let m = Seq2Seq::new(tiny(enc), 7).unwrap();
        let mut inputs: Vec<Tensor> = m.params.iter().map(|(_, v)| v.clone()).collect();
        inputs.push(window(12, 4, 0.3));
        let labels = [0, 0, 0, 1, 1, 2, 2, 2];
        let f = |t: &Tape, vars: &[Var]| {
            let (params, x) = vars.split_at(vars.len() - 1);
            let p = BoundParams::from_vars(params.to_vec());
            let mut r = rng::seeded(0);
            let ft = FrameTargets { offset: 2, labels: &labels };
            seq2seq_loss(&m, t, &p, x[0], &[0, 1, 2, 3], Some(ft), 0.0, &mut r, None)
        };
        let report = check_gradients(&inputs, &f, &GradCheck::default()).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn loss_gradients_bigru() {
        gradcheck(EncoderKind::BiGru);
    }

    #[test]
    fn loss_gradients_conv() {
        gradcheck(EncoderKind::Conv);
    }

    #[test]
    fn epsilon_ramp() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(0, 11), 0.0);
        assert!((e.value(5, 11) - 0.25).abs() < 1e-12);
        assert_eq!(e.value(10, 11), 0.5);
        assert!(EpsilonSchedule { start: 0.6, end: 0.2, ramp: Ramp::Linear }.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = Seq2Seq::new(tiny(EncoderKind::Conv), 2).unwrap();
        let ck = Checkpoint::from_json(&m.to_checkpoint().to_json().unwrap()).unwrap();
        let back = Seq2Seq::from_checkpoint(&ck).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
    }
}
