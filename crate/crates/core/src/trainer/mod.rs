//! Optimizer, learning-rate schedule, the epoch loop and checkpoints.

mod adam;
pub mod checkpoint;
mod schedule;

use std::time::Instant;

use numcore::{ParamStore, Tape};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointMeta, Record};
pub use schedule::cosine_lr;

use crate::backbones::Model;
use crate::datasets::{DatasetName, Pipeline};
use crate::error::{Error, Result};
use crate::evaluation::{self, EVAL_BATCH};
use crate::msvp;
use crate::prng::{self, Purpose};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub eta_min: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Learning-rate multiplier for every `msvp.` parameter.
    pub prompt_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 10,
            lr: 1e-3,
            eta_min: 0.0,
            adam: AdamConfig::default(),
            seed: 42,
            prompt_lr_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn for_dataset(name: DatasetName) -> Self {
        TrainConfig { epochs: name.default_epochs(), ..Default::default() }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.epochs == 0 {
            return Err("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("train.batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0) || !(self.eta_min >= 0.0) || self.eta_min > self.lr {
            return Err(format!("train.lr ({}) must be positive and at least train.eta_min ({})", self.lr, self.eta_min));
        }
        if !(self.adam.weight_decay >= 0.0) || !(self.prompt_lr_scale >= 0.0) {
            return Err("train.weight_decay and train.prompt_lr_scale must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean training objective.
    pub train_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose weights the model holds after training.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Training and validation indices into one pipeline's dataset.
pub struct TrainData<'a> {
    pub pipeline: Pipeline<'a>,
    pub train_idx: &'a [usize],
    pub val_idx: &'a [usize],
}

/// Runs the full protocol and leaves `model` holding the weights of the
/// best validation epoch (the earliest one on ties).
pub fn train(
    model: &mut Model,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate().map_err(Error::Config)?;
    if data.train_idx.is_empty() || data.val_idx.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let ds = data.pipeline.data;
    let mut adam = Adam::new(&model.store, cfg.adam);
    if let Some(m) = &model.msvp {
        for id in m.param_ids() {
            adam.set_lr_scale(id, cfg.prompt_lr_scale);
        }
    }
    let val_labels: Vec<usize> = data.val_idx.iter().map(|&i| ds.label(i)).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.eta_min);
        let mut order = data.train_idx.to_vec();
        prng::shuffle(&mut order, &mut prng::stream(cfg.seed, Purpose::Shuffle, epoch as u64, 0));
        let mut loss_sum = 0f64;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let labels: Vec<usize> = chunk.iter().map(|&i| ds.label(i)).collect();
            let x = data.pipeline.augmented(chunk, epoch);
            let (loss, bn_updates) = {
                let tape = Tape::new();
                let xv = tape.constant(x);
                let fwd = model.forward(&tape, &xv, true, None)?;
                let mut loss = tape.cross_entropy(&fwd.logits, &labels)?;
                if let Some(m) = &model.msvp {
                    if m.config.drift_weight > 0.0 {
                        let d = msvp::drift_penalty(&tape, &xv, &fwd.fused, m.config.drift_weight)?;
                        loss = tape.add(&loss, &d)?;
                    }
                    if m.config.l2_weight > 0.0 {
                        let p = m.l2_penalty(&tape, &model.store, m.config.l2_weight)?;
                        loss = tape.add(&loss, &p)?;
                    }
                }
                let value = loss.value().item() as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite { epoch: epoch + 1, step: step + 1, loss: value });
                }
                let grads = tape.backward(&loss)?;
                model.store.zero_grad();
                model.store.accumulate(&grads);
                (value, fwd.bn_updates)
            };
            model.apply_bn_updates(bn_updates);
            adam.step(&mut model.store, lr)?;
            model.store.zero_grad();
            loss_sum += loss * chunk.len() as f64;
        }
        let preds = evaluation::predict(model, &data.pipeline, data.val_idx, EVAL_BATCH)?;
        let val_acc = evaluation::top1(&preds, &val_labels)?;
        let log = EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / order.len() as f64,
            val_acc,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch + 1, val_acc, model.store.clone()));
        }
        logs.push(log);
    }
    let (best_epoch, best_val_acc, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(TrainOutcome { epochs: logs, best_epoch, best_val_acc })
}
