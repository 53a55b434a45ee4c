use serde::{Deserialize, Serialize};

use super::{DecoderContext, Seq2Seq};
use crate::error::{Error, Result};
use crate::numerics::{argmax, BoundParams, Tape, Tensor, Var};
use crate::sequence::ActionSequence;

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Everything a greedy decode emitted, step by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub format_version: u32,
    pub num_classes: usize,
    /// Emitted distribution slots; slot `num_classes` is end-of-sequence.
    pub tokens: Vec<usize>,
    /// `p_i` over the `num_classes + 1` slots.
    pub distributions: Vec<Vec<f64>>,
    /// Attention weights per step (averaged over models when ensembling).
    pub attention: Option<Vec<Vec<f64>>>,
    /// Stopped at the length limit without emitting end-of-sequence.
    pub truncated: bool,
}

impl DecodeTrace {
    /// Emitted classes without the end-of-sequence token.
    pub fn sequence(&self) -> ActionSequence {
        ActionSequence::from_vec(
            self.tokens
                .iter()
                .copied()
                .filter(|&s| s < self.num_classes)
                .collect(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Something that yields one distribution per decoding step given the
/// previously emitted slot (`None` at the first step).
pub trait StepSource {
    fn next(&mut self, prev_slot: Option<usize>) -> Result<(Vec<f64>, Option<Vec<f64>>)>;
}

struct ModelSource<'a> {
    model: &'a Seq2Seq,
    tape: Tape,
    ctx: DecoderContext,
    state: Var,
}

impl<'a> ModelSource<'a> {
    fn new(model: &'a Seq2Seq, x: &Tensor) -> Result<Self> {
        let tape = Tape::new();
        let p: BoundParams = model.params.bind_with(&tape, false)?;
        let xv = tape.constant(x.clone())?;
        let encoded = model.encode(&tape, &p, xv, None)?;
        let ctx = model.decoder_context(&tape, &p, encoded)?;
        let state = ctx.s0;
        Ok(Self { model, tape, ctx, state })
    }
}

impl StepSource for ModelSource<'_> {
    fn next(&mut self, prev_slot: Option<usize>) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let token = prev_slot.map_or(self.model.sos_token(), |s| self.model.token_of_slot(s));
        let step = self.model.decode_step(&self.tape, &self.ctx, self.state, token, None)?;
        self.state = step.state;
        let probs = self.tape.softmax(step.logits, 0)?;
        let probs = self.tape.value(probs).data().to_vec();
        let attn = step.attention.map(|a| self.tape.value(a).data().to_vec());
        Ok((probs, attn))
    }
}

/// Greedy decoding over the average of the sources' distributions; the
/// averaged argmax (lowest slot on ties) is fed back to every source.
pub fn decode_averaged<S: StepSource>(sources: &mut [S], num_classes: usize, max_len: usize) -> Result<DecodeTrace> {
    if sources.is_empty() {
        return Err(Error::Config("no models to decode with".into()));
    }
    let k = sources.len() as f64;
    let mut trace = DecodeTrace {
        format_version: TRACE_FORMAT_VERSION,
        num_classes,
        tokens: Vec::new(),
        distributions: Vec::new(),
        attention: None,
        truncated: false,
    };
    let mut prev = None;
    for _ in 0..max_len {
        let mut avg = vec![0.0; num_classes + 1];
        let mut attn: Option<Vec<f64>> = None;
        for s in sources.iter_mut() {
            let (p, a) = s.next(prev)?;
            if p.len() != avg.len() {
                return Err(Error::Shape(format!("{} slots, expected {}", p.len(), avg.len())));
            }
            avg.iter_mut().zip(&p).for_each(|(x, y)| *x += y / k);
            if let Some(a) = a {
                match &mut attn {
                    Some(acc) if acc.len() == a.len() => acc.iter_mut().zip(&a).for_each(|(x, y)| *x += y / k),
                    Some(_) => {}
                    None => attn = Some(a.iter().map(|y| y / k).collect()),
                }
            }
        }
        let slot = argmax(&avg);
        trace.tokens.push(slot);
        trace.distributions.push(avg);
        if let Some(a) = attn {
            trace.attention.get_or_insert_with(Vec::new).push(a);
        }
        if slot == num_classes {
            return Ok(trace);
        }
        prev = Some(slot);
    }
    trace.truncated = true;
    Ok(trace)
}

/// Greedy decode of one `[W, D]` window, at most `max_len` steps.
pub fn greedy_decode(model: &Seq2Seq, x: &Tensor, max_len: usize) -> Result<DecodeTrace> {
    ensemble_decode(&[model], x, max_len)
}

/// Decodes with the per-step average of several models' distributions.
pub fn ensemble_decode(models: &[&Seq2Seq], x: &Tensor, max_len: usize) -> Result<DecodeTrace> {
    let first = models.first().ok_or_else(|| Error::Config("empty model list".into()))?;
    let c = first.num_classes();
    if let Some(m) = models.iter().find(|m| m.num_classes() != c || m.config.input_dim != first.config.input_dim) {
        return Err(Error::Config(format!(
            "ensemble mixes {} and {} classes or differing input dims",
            c,
            m.num_classes()
        )));
    }
    let mut sources = models
        .iter()
        .map(|m| ModelSource::new(m, x))
        .collect::<Result<Vec<_>>>()?;
    decode_averaged(&mut sources, c, max_len)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{tiny, window};
    use super::super::EncoderKind;
    use super::*;

    struct Table(Vec<Vec<f64>>, usize);

    impl StepSource for Table {
        fn next(&mut self, _prev: Option<usize>) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
            let p = self.0[self.1.min(self.0.len() - 1)].clone();
            self.1 += 1;
            Ok((p, None))
        }
    }

    #[test]
    fn eos_head_gives_empty_sequence() {
        let mut s = [Table(vec![vec![0.0, 0.0, 1.0]], 0)];
        let tr = decode_averaged(&mut s, 2, 5).unwrap();
        assert!(tr.sequence().is_empty());
        assert_eq!(tr.tokens, vec![2]);
        assert!(!tr.truncated);
    }

    #[test]
    fn length_limit_truncates() {
        let mut s = [Table(vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.7, 0.1]], 0)];
        let tr = decode_averaged(&mut s, 2, 3).unwrap();
        assert_eq!(tr.tokens, vec![0, 1, 1]);
        assert!(tr.truncated);
    }

    #[test]
    fn averaged_mass_decides() {
        // step 1: (0.9 + 0.0) / 2 = 0.45 for slot 0 vs (0.1 + 0.7) / 2 = 0.4 for slot 1
        // step 2: slot 2 (end) gets (0.2 + 0.9) / 2 = 0.55
        let a = Table(vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.8, 0.2]], 0);
        let b = Table(vec![vec![0.0, 0.7, 0.3], vec![0.1, 0.0, 0.9]], 0);
        let tr = decode_averaged(&mut [a, b], 2, 5).unwrap();
        assert_eq!(tr.tokens, vec![0, 2]);
        assert!((tr.distributions[0][0] - 0.45).abs() < 1e-12);
        assert!((tr.distributions[1][2] - 0.55).abs() < 1e-12);
        assert!(decode_averaged::<Table>(&mut [], 2, 5).is_err());
    }

    #[test]
    fn ensembles_of_one_model() {
        let m = Seq2Seq::new(tiny(EncoderKind::BiGru), 8).unwrap();
        let x = window(9, 4, 0.1);
        let g = greedy_decode(&m, &x, 6).unwrap();
        assert_eq!(ensemble_decode(&[&m], &x, 6).unwrap(), g);
        let three = ensemble_decode(&[&m, &m, &m], &x, 6).unwrap();
        assert_eq!(three.tokens, g.tokens);
        for p in &g.distributions {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(g.tokens.len() <= 6);
        let back: DecodeTrace = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
