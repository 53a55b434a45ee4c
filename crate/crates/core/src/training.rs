//! Pieces shared by the segmenter and seq2seq training loops.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rng, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Training examples per optimizer step (gradients are averaged).
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Validation runs every `eval_every` epochs and always after the last.
    pub eval_every: usize,
    /// Stop early once a validation AER at or below this value is seen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_aer: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            adam: AdamConfig {
                lr: 5e-3,
                clip_norm: 5.0,
                ..AdamConfig::default()
            },
            eval_every: 1,
            stop_at_aer: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {}", self.adam.lr)));
        }
        Ok(())
    }

    pub fn evaluates_at(&self, epoch: usize) -> bool {
        (epoch + 1) % self.eval_every == 0 || epoch + 1 == self.epochs
    }

    pub fn reached_target(&self, val_aer: Option<f64>) -> bool {
        matches!((self.stop_at_aer, val_aer), (Some(t), Some(v)) if v <= t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss per example.
    pub loss: f64,
    /// Frame accuracy on the training pass, when the model has a frame head.
    pub frame_accuracy: Option<f64>,
    pub val_aer: Option<f64>,
    pub val_frame_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (lowest validation AER, earliest on ties).
    pub best_epoch: Option<usize>,
    pub best_val_aer: Option<f64>,
}

impl TrainingLog {
    /// Records an epoch; returns true when it improves on the best so far.
    pub fn push(&mut self, entry: EpochLog) -> bool {
        let improved = match (entry.val_aer, self.best_val_aer) {
            (Some(v), None) => v.is_finite(),
            (Some(v), Some(best)) => v < best,
            _ => false,
        };
        if improved {
            self.best_epoch = Some(entry.epoch);
            self.best_val_aer = entry.val_aer;
        }
        self.epochs.push(entry);
        improved
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

/// Example order for one epoch, reproducible from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derived(seed, 1_000_000 + epoch as u64));
    order
}

pub(crate) fn accumulate(acc: &mut Option<Vec<Vec<f64>>>, grads: Vec<Vec<f64>>) {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (x, g) in a.iter_mut().zip(grads) {
                for (xi, gi) in x.iter_mut().zip(g) {
                    *xi += gi;
                }
            }
        }
    }
}

pub(crate) fn diverged(epoch: usize, example: usize, err: Error) -> Error {
    match err {
        Error::Numeric(what) => Error::Numeric(format!("{what} (epoch {epoch}, example {example})")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(epoch: usize, val: Option<f64>) -> EpochLog {
        EpochLog {
            epoch,
            loss: 1.0,
            frame_accuracy: None,
            val_aer: val,
            val_frame_accuracy: None,
        }
    }

    #[test]
    fn best_is_earliest_minimum() {
        let mut log = TrainingLog::default();
        assert!(log.push(entry(0, Some(0.5))));
        assert!(log.push(entry(1, Some(0.3))));
        assert!(!log.push(entry(2, Some(0.3))));
        assert!(!log.push(entry(3, None)));
        assert_eq!(log.best_epoch, Some(1));
    }

    #[test]
    fn order_is_a_seeded_permutation() {
        let a = epoch_order(10, 3, 0);
        assert_eq!(a, epoch_order(10, 3, 0));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_ne!(a, epoch_order(10, 3, 1));
    }

    #[test]
    fn eval_schedule() {
        let c = TrainConfig { epochs: 5, eval_every: 2, ..TrainConfig::default() };
        let at: Vec<usize> = (0..5).filter(|&e| c.evaluates_at(e)).collect();
        assert_eq!(at, vec![1, 3, 4]);
    }
}
