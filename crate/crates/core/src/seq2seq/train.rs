use super::window::{training_windows, window_input, windowed_infer};
use super::{seq2seq_loss, FrameTargets, Seq2Seq, Seq2SeqConfig};
use crate::error::{Error, Result};
use crate::metrics::aer;
use crate::numerics::{rng, Adam, Tape, Tensor};
use crate::sequence::LabeledSample;
use crate::training::{accumulate, diverged, epoch_order, EpochLog, TrainConfig, TrainingLog};

pub struct TrainedSeq2Seq {
    pub model: Seq2Seq,
    pub log: TrainingLog,
}

/// Mean per-sample AER of windowed inference on whole sequences.
pub fn evaluate_seq2seq(model: &Seq2Seq, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += aer(s.sequence(), &windowed_infer(model, &s.features)?)?;
    }
    Ok(total / samples.len() as f64)
}

struct Window {
    sample: usize,
    input: Tensor,
    targets: Vec<usize>,
    offset: usize,
    first: usize,
    count: usize,
}

/// Trains on windows cut from the samples (their `features` are the model
/// input, raw or frame probabilities) and keeps the parameters with the
/// lowest validation AER under windowed inference.
pub fn train_seq2seq(
    train: &[LabeledSample],
    val: &[LabeledSample],
    config: Seq2SeqConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedSeq2Seq> {
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    train_cfg.validate()?;
    config.validate()?;
    for s in train.iter().chain(val) {
        if s.features.dim() != config.input_dim {
            return Err(Error::Shape(format!(
                "sample {} has {} channels, model expects {}",
                s.id,
                s.features.dim(),
                config.input_dim
            )));
        }
        s.frame_labels.check_classes(config.num_classes)?;
    }
    let spec = config.window;
    let eos = config.num_classes;
    let mut windows = Vec::new();
    for (i, s) in train.iter().enumerate() {
        for (start, seq) in training_windows(&s.frame_labels.labels, &spec) {
            let (offset, first, count) = spec.in_range(start, s.len());
            let mut targets = seq.into_vec();
            targets.push(eos);
            windows.push(Window {
                sample: i,
                input: window_input(&s.features, start, &spec)?,
                targets,
                offset,
                first,
                count,
            });
        }
    }

    let mut model = Seq2Seq::new(config, seed)?;
    let mut adam = Adam::new(train_cfg.adam, &model.params);
    let val = if val.is_empty() { train } else { val };
    let mut log = TrainingLog::default();
    let mut best = model.params.clone();

    for epoch in 0..train_cfg.epochs {
        let eps = model.config.epsilon.value(epoch, train_cfg.epochs);
        let order = epoch_order(windows.len(), seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let mut grads = None;
            for &w in batch {
                let win = &windows[w];
                let stream = ((epoch as u64) << 32) | w as u64;
                let mut sampling = rng::derived(seed, stream);
                let mut dropout = rng::derived(seed ^ 0xd40, stream);
                let labels = &train[win.sample].frame_labels.labels[win.first..win.first + win.count];
                let tape = Tape::new();
                let bound = model.params.bind(&tape)?;
                let mut step = || -> Result<_> {
                    let x = tape.constant(win.input.clone())?;
                    let frames = FrameTargets {
                        offset: win.offset,
                        labels,
                    };
                    let loss = seq2seq_loss(
                        &model,
                        &tape,
                        &bound,
                        x,
                        &win.targets,
                        Some(frames),
                        eps,
                        &mut sampling,
                        Some(&mut dropout),
                    )?;
                    let g = tape.backward(loss)?;
                    Ok((tape.item(loss), g))
                };
                let (loss, g) = step().map_err(|e| diverged(epoch, w, e))?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("seq2seq loss {loss} (epoch {epoch}, window {w})")));
                }
                loss_sum += loss;
                accumulate(&mut grads, model.params.collect_grads(&g, &bound));
            }
            let mut grads = grads.expect("non-empty batch");
            let k = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|v| *v *= k);
            adam.step(&mut model.params, &grads)?;
        }
        let val_aer = if train_cfg.evaluates_at(epoch) {
            Some(evaluate_seq2seq(&model, val)?)
        } else {
            None
        };
        let improved = log.push(EpochLog {
            epoch,
            loss: loss_sum / windows.len() as f64,
            frame_accuracy: None,
            val_aer,
            val_frame_accuracy: None,
        });
        if improved {
            best = model.params.clone();
        }
        if train_cfg.reached_target(val_aer) {
            break;
        }
    }
    model.params = best;
    Ok(TrainedSeq2Seq { model, log })
}
