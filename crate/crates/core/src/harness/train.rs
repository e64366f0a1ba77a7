//! Adam training with swap augmentation and early stopping on validation
//! loss, for subject-independent pretraining and subject-specific
//! fine-tuning.

use aad_autodiff::{AdamConfig, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::windows::{augment_swap, window_stream, Window};
use crate::bundle::TrialBundle;
use crate::catcn::{batch_from, CatcnModel, CheckpointMeta, Mode};
use crate::error::{config, AadError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub window_s: f64,
    pub overlap: f64,
    pub lr_si: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Random subset of training windows drawn each epoch; all when unset.
    pub max_windows_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            patience: 5,
            window_s: 5.0,
            overlap: 0.75,
            lr_si: 5e-5,
            weight_decay: 1e-4,
            batch_size: 64,
            seed: 0,
            max_windows_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn lr_ss(&self) -> f64 {
        self.lr_si / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return config(format!("overlap must be in [0, 1), got {}", self.overlap));
        }
        if self.patience == 0 {
            return config("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return config("batch size must be at least 1");
        }
        if !(self.window_s > 0.0) || !(self.lr_si > 0.0) || self.weight_decay < 0.0 {
            return config("window, learning rate and weight decay must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss; absent for epoch 0, which only validates.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Weights from `best_epoch`.
    pub model: CatcnModel,
    pub meta: CheckpointMeta,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

type Sample<'a> = (&'a TrialBundle, usize, usize, bool);

fn samples<'a>(trials: &[&'a TrialBundle], windows: &[Window]) -> Vec<Sample<'a>> {
    windows
        .iter()
        .map(|w| (trials[w.trial], w.start, w.len, w.swapped))
        .collect()
}

fn labels(batch: &[Sample<'_>]) -> Vec<f64> {
    batch
        .iter()
        .map(|&(t, _, _, swapped)| {
            if swapped {
                t.attended.flip().label()
            } else {
                t.attended.label()
            }
        })
        .collect()
}

/// Mean logistic loss over `data` in eval mode.
pub fn mean_loss(model: &CatcnModel, data: &[Sample<'_>], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in data.chunks(batch_size) {
        let (eeg, a, b) = batch_from(chunk);
        let mut g = Graph::new();
        let fp = model.forward(&mut g, &eeg, &a, &b, Mode::Eval)?;
        let loss = g.bce_with_logits(fp.logits, &labels(chunk))?;
        total += g.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Subject-independent training from the model's current weights.
pub fn train_si(
    model: CatcnModel,
    train: &[&TrialBundle],
    validation: &[&TrialBundle],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    fit(model, train, validation, cfg, cfg.lr_si, "si")
}

/// Continue from a pretrained model at half the learning rate with fresh
/// optimizer moments.
pub fn finetune_ss(
    model: CatcnModel,
    train: &[&TrialBundle],
    validation: &[&TrialBundle],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if let Some(t) = train.iter().chain(validation).find(|t| t.n_channels() != model.config.c) {
        return config(format!(
            "checkpoint expects {} channels, trial {} has {}",
            model.config.c,
            t.trial_id,
            t.n_channels()
        ));
    }
    fit(model, train, validation, cfg, cfg.lr_ss(), "ss")
}

fn fit(
    mut model: CatcnModel,
    train: &[&TrialBundle],
    validation: &[&TrialBundle],
    cfg: &TrainConfig,
    lr: f64,
    mode: &str,
) -> Result<TrainReport> {
    cfg.validate()?;
    let train_windows = augment_swap(&window_stream(train, cfg.window_s, cfg.overlap));
    let val_windows = augment_swap(&window_stream(validation, cfg.window_s, cfg.overlap));
    if train_windows.is_empty() {
        return config("no training windows after exclusions");
    }
    if val_windows.is_empty() {
        return config("no validation windows; early stopping needs a validation split");
    }
    let mut train_set = samples(train, &train_windows);
    let val_set = samples(validation, &val_windows);
    let mut adam = AdamState::new(AdamConfig {
        lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let meta = |epoch, val_loss| CheckpointMeta {
        mode: mode.to_string(),
        lr,
        epoch,
        val_loss: Some(val_loss),
        seed: cfg.seed,
        ..CheckpointMeta::default()
    };

    let initial = mean_loss(&model, &val_set, cfg.batch_size)?;
    let mut history = vec![EpochLog {
        epoch: 0,
        train_loss: None,
        val_loss: initial,
    }];
    let mut best = (model.clone(), 0, initial);
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        train_set.shuffle(&mut rng);
        let n = cfg.max_windows_per_epoch.map_or(train_set.len(), |m| m.min(train_set.len()));
        let mut loss_sum = 0.0;
        for (bi, batch) in train_set[..n].chunks(cfg.batch_size).enumerate() {
            let loss = step(&mut model, &mut adam, batch)?;
            if !loss.is_finite() {
                return Err(AadError::Training(format!(
                    "loss {loss} at epoch {epoch}, batch {bi} (lr {lr}, batch size {})",
                    batch.len()
                )));
            }
            loss_sum += loss * batch.len() as f64;
        }
        let val_loss = mean_loss(&model, &val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(AadError::Training(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        history.push(EpochLog {
            epoch,
            train_loss: Some(loss_sum / n as f64),
            val_loss,
        });
        log::info!("{mode} epoch {epoch}: train {:.4} val {val_loss:.4}", loss_sum / n as f64);
        if val_loss < best.2 {
            best = (model.clone(), epoch, val_loss);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (model, best_epoch, best_val_loss) = best;
    Ok(TrainReport {
        model,
        meta: meta(best_epoch, best_val_loss),
        history,
        best_epoch,
        best_val_loss,
    })
}

/// One optimizer step; returns the batch loss.
fn step(model: &mut CatcnModel, adam: &mut AdamState, batch: &[Sample<'_>]) -> Result<f64> {
    let (eeg, a, b) = batch_from(batch);
    let mut g = Graph::new();
    let fp = model.forward(&mut g, &eeg, &a, &b, Mode::Train)?;
    let loss = g.bce_with_logits(fp.logits, &labels(batch))?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = g.backward(loss)?;
    let grads: Vec<Tensor> = fp.params.iter().map(|&v| grads.take(v)).collect();
    let grad_refs: Vec<&Tensor> = grads.iter().collect();
    let mut params: Vec<&mut Tensor> = model.params.iter_mut().collect();
    adam.step(&mut params, &grad_refs)?;
    model.update_running(&fp.moments);
    Ok(value)
}
