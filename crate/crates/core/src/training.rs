//! Optimization loop: Adam with weight decay, the step learning-rate
//! schedule, the epoch driver, and evaluation metrics.
//!
//! Determinism contract: (seed, config, dataset) fully determines every
//! reported number. Batches are visited in seeded-shuffle order, samples
//! and gradient reductions run left-to-right, and the optimizer is pure
//! arithmetic over that order.

use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, WeightDecayMode};
use crate::data::PreparedSample;
use crate::diffmath::{HasParams, Rng, Tensor};
use crate::error::{Error, Result};
use crate::model::Model;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter tensor, aligned with the
/// model's visit order.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(model: &mut impl HasParams) -> AdamState {
        let mut m = Vec::new();
        model.visit_params(&mut |_, p| m.push(Tensor::zeros(p.value.shape())));
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction. Coupled decay folds
/// `wd * theta` into the gradient before the moments; decoupled applies
/// `lr * wd * theta` directly. Gradients are zeroed afterwards.
pub fn adam_step(
    model: &mut impl HasParams,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    mode: WeightDecayMode,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let mut k = 0;
    model.visit_params(&mut |_, p| {
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        let values = p.value.as_mut_slice();
        let grads = p.grad.as_mut_slice();
        for i in 0..values.len() {
            let g = match mode {
                WeightDecayMode::Coupled => grads[i] + weight_decay * values[i],
                WeightDecayMode::Decoupled => grads[i],
            };
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let mut update = m_hat / (v_hat.sqrt() + ADAM_EPS);
            if mode == WeightDecayMode::Decoupled {
                update += weight_decay * values[i];
            }
            values[i] -= lr * update;
            grads[i] = 0.0;
        }
        k += 1;
    });
}

/// Step learning-rate schedule:
/// `lr(epoch) = base * factor^floor(epoch / every)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub total_epochs: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, decay_factor: f64, decay_every: usize, total_epochs: usize) -> Self {
        Schedule {
            base_lr,
            decay_factor,
            decay_every,
            total_epochs,
        }
    }

    /// The original large-scale training schedule: 5e-5 decayed by 0.1
    /// every 5 epochs for 50 epochs.
    pub fn paper() -> Schedule {
        Schedule::new(5e-5, 0.1, 5, 50)
    }

    pub fn from_config(cfg: &TrainConfig) -> Schedule {
        Schedule::new(cfg.lr, cfg.decay_factor, cfg.decay_every, cfg.epochs)
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        Ok(self.base_lr * self.decay_factor.powi((epoch / self.decay_every) as i32))
    }
}

/// Mean losses over one pass of the training set.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub l_emo: f64,
    pub l_pol: f64,
    pub l_total: f64,
}

/// One epoch: seeded shuffle, batch means, backward, Adam. Returns the
/// mean per-sample losses.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut Model,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    adam: &mut AdamState,
    lr: f64,
    epoch: usize,
    shuffle_rng: &mut Rng,
) -> Result<EpochSummary> {
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    shuffle_rng.shuffle(&mut order);

    let mut sum_emo = 0.0;
    let mut sum_pol = 0.0;
    let mut sum_total = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let sample = &data[i];
            let (breakdown, trace) = model.loss_forward(sample, cfg.lambda)?;
            model.backward(sample, &trace, cfg.lambda, scale)?;
            sum_emo += breakdown.l_emo;
            sum_pol += breakdown.l_pol;
            sum_total += breakdown.l_total;
        }
        adam_step(model, adam, lr, cfg.weight_decay, cfg.weight_decay_mode);
    }
    let n = data.len() as f64;
    Ok(EpochSummary {
        epoch,
        lr,
        l_emo: sum_emo / n,
        l_pol: sum_pol / n,
        l_total: sum_total / n,
    })
}

/// Run the full schedule, invoking `progress` after every epoch.
pub fn train(
    model: &mut Model,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochSummary),
) -> Result<Vec<EpochSummary>> {
    let schedule = Schedule::from_config(cfg);
    let mut adam = AdamState::new(model);
    let mut shuffle_rng = Rng::derive(cfg.seed, "shuffle");
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at_epoch(epoch)?;
        let summary = train_epoch(model, data, cfg, &mut adam, lr, epoch, &mut shuffle_rng)?;
        progress(&summary);
        rows.push(summary);
    }
    Ok(rows)
}

/// Evaluation metrics. The confusion matrix is row-major with rows =
/// true labels and columns = predictions, both in taxonomy order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub emotion_accuracy: f64,
    pub polarity_accuracy: f64,
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<usize>,
}

/// Argmax accuracy over a dataset; polarity accuracy compares the
/// taxonomy polarity of the argmax against the label's.
pub fn evaluate(model: &Model, data: &[PreparedSample]) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let tax = model.taxonomy();
    let c = tax.count();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut emotion_hits = 0usize;
    let mut polarity_hits = 0usize;
    for sample in data {
        let (probs, _) = model.forward(sample)?;
        let pred = probs.argmax();
        confusion[sample.label][pred] += 1;
        if pred == sample.label {
            emotion_hits += 1;
        }
        if tax.polarity_of(pred)? == tax.polarity_of(sample.label)? {
            polarity_hits += 1;
        }
    }
    let total = data.len() as f64;
    let per_class = confusion.iter().map(|row| row.iter().sum()).collect();
    Ok(Metrics {
        emotion_accuracy: emotion_hits as f64 / total,
        polarity_accuracy: polarity_hits as f64 / total,
        labels: tax.emotions().iter().map(|e| e.name.clone()).collect(),
        confusion,
        per_class,
    })
}

/// Mean (l_emo, l_pol, l_total) over a dataset without touching grads.
pub fn dataset_loss(model: &Model, data: &[PreparedSample], lambda: f64) -> Result<(f64, f64, f64)> {
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let mut sums = (0.0, 0.0, 0.0);
    for sample in data {
        let (b, _) = model.loss_forward(sample, lambda)?;
        sums.0 += b.l_emo;
        sums.1 += b.l_pol;
        sums.2 += b.l_total;
    }
    let n = data.len() as f64;
    Ok((sums.0 / n, sums.1 / n, sums.2 / n))
}
