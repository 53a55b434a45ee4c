use super::{segmenter_loss, Segmenter, SegmenterConfig};
use crate::error::{Error, Result};
use crate::metrics::aer;
use crate::numerics::{argmax, rng, Adam, Tape, Tensor};
use crate::sequence::{collapse, ClassId, LabeledSample};
use crate::training::{accumulate, diverged, epoch_order, EpochLog, TrainConfig, TrainingLog};

pub struct TrainedSegmenter {
    pub model: Segmenter,
    pub log: TrainingLog,
}

/// `median(freq) / freq[k]` over classes present in the labels; absent
/// classes get weight 1.
pub fn median_frequency_weights<'a>(labelings: impl IntoIterator<Item = &'a [ClassId]>, c: usize) -> Vec<f64> {
    let mut counts = vec![0usize; c];
    for labels in labelings {
        for &l in labels {
            if l < c {
                counts[l] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    let mut freqs: Vec<f64> = counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| n as f64 / total as f64)
        .collect();
    if freqs.is_empty() {
        return vec![1.0; c];
    }
    freqs.sort_by(f64::total_cmp);
    let m = freqs.len();
    let median = if m % 2 == 1 {
        freqs[m / 2]
    } else {
        0.5 * (freqs[m / 2 - 1] + freqs[m / 2])
    };
    counts
        .iter()
        .map(|&n| if n == 0 { 1.0 } else { median * total as f64 / n as f64 })
        .collect()
}

/// Mean per-sample AER of the collapsed argmax labeling and pooled frame
/// accuracy.
pub fn evaluate_segmenter(model: &Segmenter, samples: &[LabeledSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    let mut aer_sum = 0.0;
    let (mut hits, mut frames) = (0usize, 0usize);
    for s in samples {
        let pred = model.predict(&s.features)?.argmax_labels();
        aer_sum += aer(s.sequence(), &collapse(&pred))?;
        hits += pred
            .labels
            .iter()
            .zip(&s.frame_labels.labels)
            .filter(|(a, b)| a == b)
            .count();
        frames += s.len();
    }
    Ok((aer_sum / samples.len() as f64, hits as f64 / frames.max(1) as f64))
}

/// Trains with Adam on whole sequences and keeps the parameters with the
/// lowest validation AER (the training set stands in when `val` is empty).
pub fn train_segmenter(
    train: &[LabeledSample],
    val: &[LabeledSample],
    mut config: SegmenterConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedSegmenter> {
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    train_cfg.validate()?;
    if let Some(s) = train.iter().chain(val).find(|s| s.features.dim() != config.input_dim) {
        return Err(Error::Shape(format!(
            "sample {} has {} channels, model expects {}",
            s.id,
            s.features.dim(),
            config.input_dim
        )));
    }
    for s in train.iter().chain(val) {
        s.frame_labels.check_classes(config.num_classes)?;
    }
    if config.class_weights.is_none() {
        config.class_weights = Some(median_frequency_weights(
            train.iter().map(|s| s.frame_labels.labels.as_slice()),
            config.num_classes,
        ));
    }
    let mut model = Segmenter::new(config, seed)?;
    let mut adam = Adam::new(train_cfg.adam, &model.params);
    let inputs: Vec<Tensor> = train
        .iter()
        .map(|s| Tensor::matrix(s.len(), s.features.dim(), s.features.data().to_vec()))
        .collect::<Result<_>>()?;
    let val = if val.is_empty() { train } else { val };
    let mut log = TrainingLog::default();
    let mut best = model.params.clone();

    for epoch in 0..train_cfg.epochs {
        let order = epoch_order(train.len(), seed, epoch);
        let mut loss_sum = 0.0;
        let (mut hits, mut frames) = (0usize, 0usize);
        for batch in order.chunks(train_cfg.batch_size) {
            let mut grads = None;
            for &i in batch {
                let mut r = rng::derived(seed, ((epoch as u64) << 32) | i as u64);
                let tape = Tape::new();
                let bound = model.params.bind(&tape)?;
                let x = tape.constant(inputs[i].clone())?;
                let labels = &train[i].frame_labels.labels;
                let mut step = || -> Result<_> {
                    let out = model.forward(&tape, &bound, x, Some(&mut r))?;
                    let loss = segmenter_loss(&tape, &out, labels, &model.config)?;
                    let g = tape.backward(loss)?;
                    Ok((out, tape.item(loss), g))
                };
                let (out, loss, g) = step().map_err(|e| diverged(epoch, i, e))?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("segmenter loss {loss} (epoch {epoch}, example {i})")));
                }
                loss_sum += loss;
                let last = tape.value(*out.stage_logits.last().expect("stages"));
                hits += last
                    .data()
                    .chunks_exact(model.config.num_classes)
                    .zip(labels)
                    .filter(|(row, &l)| argmax(row) == l)
                    .count();
                frames += labels.len();
                accumulate(&mut grads, model.params.collect_grads(&g, &bound));
            }
            let mut grads = grads.expect("non-empty batch");
            let k = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|v| *v *= k);
            adam.step(&mut model.params, &grads)?;
        }
        let (val_aer, val_acc) = if train_cfg.evaluates_at(epoch) {
            let (a, f) = evaluate_segmenter(&model, val)?;
            (Some(a), Some(f))
        } else {
            (None, None)
        };
        let improved = log.push(EpochLog {
            epoch,
            loss: loss_sum / train.len() as f64,
            frame_accuracy: Some(hits as f64 / frames.max(1) as f64),
            val_aer,
            val_frame_accuracy: val_acc,
        });
        if improved {
            best = model.params.clone();
        }
        if train_cfg.reached_target(val_aer) {
            break;
        }
    }
    model.params = best;
    Ok(TrainedSegmenter { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorConfig};

    #[test]
    fn median_frequency() {
        // frequencies 0.5, 0.25, 0.25 -> median 0.25
        let a = [0usize, 0, 1, 2];
        let w = median_frequency_weights([&a[..]], 4);
        assert_eq!(w, vec![0.5, 1.0, 1.0, 1.0]);
    }

    fn toy() -> Vec<LabeledSample> {
        let mut g = GeneratorConfig::stroke_like(2);
        g.class_names.truncate(3);
        g.transitions = crate::datagen::uniform_transitions(3);
        g.mean_durations = vec![0.12, 0.15, 0.1];
        g.emission_means.truncate(3);
        g.feature_dim = 16;
        g.noise_sigma = 0.2;
        g.length_range = (60, 80);
        generate(&g, 3).unwrap()
    }

    fn small(input_dim: usize) -> SegmenterConfig {
        SegmenterConfig {
            input_dim,
            num_classes: 3,
            stages: 2,
            layers_per_stage: 3,
            channels: 8,
            ..SegmenterConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible_and_selects_best() {
        let data = toy();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train_segmenter(&data[..2], &data[2..], small(16), &cfg, 9).unwrap();
        let b = train_segmenter(&data[..2], &data[2..], small(16), &cfg, 9).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params, b.model.params);
        let best = a.log.best_val_aer.unwrap();
        assert!(best <= a.log.last().unwrap().val_aer.unwrap());
        let (kept, _) = evaluate_segmenter(&a.model, &data[2..]).unwrap();
        assert_eq!(kept, best);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = toy();
        let cfg = TrainConfig::default();
        assert!(train_segmenter(&[], &data, small(16), &cfg, 0).is_err());
        assert!(train_segmenter(&data, &[], small(4), &cfg, 0).is_err());
    }
}
