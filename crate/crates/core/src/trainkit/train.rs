use std::ops::ControlFlow;

use rand::seq::SliceRandom;

use super::loss::total_loss;
use super::metrics::{metrics_from_predictions, MetricsReport};
use crate::arcdecoder::argmax;
use crate::datakit::{LoadedSample, RightOfWayLabel, Status};
use crate::error::{Error, Result};
use crate::model::{model_forward, Model};
use crate::tensor::{accumulate_grads, adam_step, rng, scale_grads, AdamConfig, AdamState, ParamGrads, Real, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Workers computing per-sample gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            lr: 1e-4,
            batch_size: 4,
            seed: 0,
            shuffle: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", format!("must be a non-negative number, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-epoch summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean total loss per sample.
    pub loss: f64,
    /// Fraction of samples whose two directions were both predicted right
    /// (margin-free) during the epoch's forward passes.
    pub train_accuracy: f64,
}

impl EpochRecord {
    /// `epoch<TAB>loss<TAB>train_acc`.
    pub fn log_line(&self) -> String {
        format!("{}\t{:.6}\t{:.6}", self.epoch, self.loss, self.train_accuracy)
    }
}

struct SampleResult {
    loss: f64,
    correct: bool,
    grads: ParamGrads<f32>,
}

fn prediction(straight: &[f32], left: &[f32]) -> Result<RightOfWayLabel> {
    Ok(RightOfWayLabel::new(
        Status::from_index(argmax(straight))?,
        Status::from_index(argmax(left))?,
    ))
}

fn sample_step(model: &Model, sample: &LoadedSample) -> Result<SampleResult> {
    let tape = Tape::new();
    let bound = model.params().bind(&tape);
    let frames: Vec<_> = sample.buffer.frames().iter().map(|f| tape.constant(f.clone())).collect();
    let out = model_forward(&frames, &bound, model.config(), Some(sample.label.targets()))?;
    let loss = total_loss(out.straight, out.left, sample.label)?;
    let predicted = prediction(out.straight_inference.value().data(), out.left_inference.value().data())?;
    let loss_value = loss.value().item()?.as_f64();
    let grads = bound.collect_grads(&tape.backward(loss)?);
    Ok(SampleResult {
        loss: loss_value,
        correct: predicted == sample.label,
        grads,
    })
}

/// Runs `f` over `items` on up to `threads` scoped workers and returns the
/// results in input order.
pub(crate) fn parallel_map<I: Sync, R: Send>(items: &[I], threads: usize, f: impl Fn(&I) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

pub fn train(model: &mut Model, data: &[LoadedSample], cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    train_with(model, data, cfg, |_, _| ControlFlow::Continue(()))
}

/// Trains with Adam, averaging gradients over each batch. `on_epoch` sees
/// every finished epoch and may end training early.
pub fn train_with(
    model: &mut Model,
    data: &[LoadedSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> ControlFlow<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng::stream(cfg.seed, &format!("train.epoch{epoch}")));
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = parallel_map(batch, cfg.threads, |&i| sample_step(model, &data[i]));
            let mut grads = ParamGrads::new();
            for (k, r) in results.into_iter().enumerate() {
                let r = r.map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {}, sample {}: {m}", b + 1, batch[k])),
                    other => other,
                })?;
                if !r.loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {} at epoch {epoch}, batch {}, sample {}",
                        r.loss,
                        b + 1,
                        batch[k]
                    )));
                }
                loss_sum += r.loss;
                correct += r.correct as usize;
                accumulate_grads(&mut grads, &r.grads)?;
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f32);
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for `{name}` at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            adam_step(model.params_mut(), &grads, &mut state, &adam)?;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        };
        history.push(record);
        if on_epoch(&record, model).is_break() {
            break;
        }
    }
    Ok(history)
}

/// Margin-free predictions for every sample, in order.
pub fn predict_all(model: &Model, data: &[LoadedSample], threads: usize) -> Result<Vec<RightOfWayLabel>> {
    parallel_map(data, threads, |s| {
        let p = model.predict(&s.buffer)?;
        Ok(RightOfWayLabel::new(
            Status::from_index(p.straight_class())?,
            Status::from_index(p.left_class())?,
        ))
    })
    .into_iter()
    .collect()
}

pub fn evaluate(model: &Model, data: &[LoadedSample], threads: usize) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let predictions = predict_all(model, data, threads)?;
    let labels: Vec<_> = data.iter().map(|s| s.label).collect();
    metrics_from_predictions(&predictions, &labels)
}
