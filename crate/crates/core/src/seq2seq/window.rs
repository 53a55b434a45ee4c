use serde::{Deserialize, Serialize};

use super::decode::ensemble_decode;
use super::Seq2Seq;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::sequence::{collapse_labels, ActionSequence, FeatureSequence};

/// Windowing of long sequences. A window holds `window` frames: a core of
/// `window - 2 * margin` frames whose labels are the target, with `margin`
/// frames of context on each side. Training cores start every `stride`
/// frames; inference cores tile the sequence without overlap. Frames
/// outside the sequence are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: usize,
    pub stride: usize,
    pub margin: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window: 60,
            stride: 20,
            margin: 10,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || 2 * self.margin >= self.window {
            return Err(Error::Config(format!(
                "window {} leaves no core with margin {}",
                self.window, self.margin
            )));
        }
        if self.stride == 0 || self.stride > self.window {
            return Err(Error::Config(format!("stride {} for window {}", self.stride, self.window)));
        }
        Ok(())
    }

    pub fn core(&self) -> usize {
        self.window - 2 * self.margin
    }

    /// Core starts used for training on a sequence of `len` frames.
    pub fn training_cores(&self, len: usize) -> Vec<usize> {
        (0..len).step_by(self.stride).collect()
    }

    /// Core starts used for inference: non-overlapping, covering every frame.
    pub fn inference_cores(&self, len: usize) -> Vec<usize> {
        (0..len).step_by(self.core()).collect()
    }

    /// `(first in-range row of the window, first frame index, in-range count)`.
    pub fn in_range(&self, core_start: usize, len: usize) -> (usize, usize, usize) {
        let begin = core_start as isize - self.margin as isize;
        let first = begin.max(0) as usize;
        let end = ((begin + self.window as isize).max(0) as usize).min(len);
        let offset = (first as isize - begin) as usize;
        (offset, first, end.saturating_sub(first))
    }
}

/// `[window, D]` input around the core starting at `core_start`.
pub fn window_input(x: &FeatureSequence, core_start: usize, spec: &WindowSpec) -> Result<Tensor> {
    let d = x.dim();
    let mut data = vec![0.0; spec.window * d];
    let (offset, first, count) = spec.in_range(core_start, x.len());
    data[offset * d..(offset + count) * d].copy_from_slice(&x.data()[first * d..(first + count) * d]);
    Tensor::matrix(spec.window, d, data)
}

/// `(core_start, collapsed core labels)` for every training window.
pub fn training_windows(labels: &[usize], spec: &WindowSpec) -> Vec<(usize, ActionSequence)> {
    spec.training_cores(labels.len())
        .into_iter()
        .map(|s| {
            let end = (s + spec.core()).min(labels.len());
            (s, collapse_labels(&labels[s..end]))
        })
        .collect()
}

/// Concatenates window decodes, dropping the leading token of a part when
/// it repeats the last token kept so far. Empty parts contribute nothing.
pub fn stitch(parts: &[ActionSequence]) -> ActionSequence {
    let mut out: Vec<usize> = Vec::new();
    for part in parts {
        let items = part.items();
        let skip = usize::from(!items.is_empty() && out.last() == items.first());
        out.extend_from_slice(&items[skip..]);
    }
    ActionSequence::from_vec(out)
}

/// Decodes every inference window of `x` and stitches the results. Repeats
/// inside one window decode are collapsed first, so the result is canonical.
pub fn windowed_infer(model: &Seq2Seq, x: &FeatureSequence) -> Result<ActionSequence> {
    windowed_infer_ensemble(&[model], x)
}

pub fn windowed_infer_ensemble(models: &[&Seq2Seq], x: &FeatureSequence) -> Result<ActionSequence> {
    let first = models.first().ok_or_else(|| Error::Config("empty model list".into()))?;
    let spec = first.config.window;
    let max_len = first.config.max_decode_len;
    let parts = spec
        .inference_cores(x.len())
        .into_iter()
        .map(|s| {
            let input = window_input(x, s, &spec)?;
            let trace = ensemble_decode(models, &input, max_len)?;
            Ok(collapse_labels(trace.sequence().items()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stitch(&parts))
}
