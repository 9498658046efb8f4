use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Autoencoder, Batch, LossBreakdown};
use crate::corpus::{ContextSample, Dataset};
use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, AdamState, HasParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Probability of replacing a training sample's affordance input with
    /// zeros (its target is kept). 0 disables.
    pub affordance_dropout: f64,
    /// Return the best-validation parameters (true) or the last epoch's.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 200,
            validation_fraction: 0.2,
            patience: 10,
            adam: AdamConfig::default(),
            seed: 0,
            affordance_dropout: 0.0,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.patience == 0 || self.batch_size < 2 || self.max_epochs == 0 {
            return Err(Error::Config("patience and max_epochs must be ≥ 1, batch_size ≥ 2".into()));
        }
        if !(0.0..=1.0).contains(&self.affordance_dropout) {
            return Err(Error::Config("affordance_dropout must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training-batch losses per epoch (training mode).
    pub train: Vec<LossBreakdown>,
    /// Validation losses per epoch (inference mode).
    pub validation: Vec<LossBreakdown>,
    /// Last epoch run, 1-based.
    pub stopped_epoch: usize,
    /// Epoch whose parameters minimized the validation total, 1-based.
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Patience-based early stopping on a scalar that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's loss. Returns `(improved, stop)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        self.epoch += 1;
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        (improved, self.epoch - self.best_epoch >= self.patience)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Seeded split of sample indices into (train, validation), stratified by
/// game: each game contributes `round(fraction · n)` validation samples,
/// but never all of its samples.
pub fn split_by_game(samples: &[ContextSample], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_game: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_game.entry(&s.source.game_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_game {
        idx.shuffle(&mut rng);
        let n_val = ((fraction * idx.len() as f64).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Splits a shuffled index list into batches of `size`, folding a trailing
/// batch of one into its predecessor (batchnorm needs two rows).
pub(crate) fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Inference-mode losses over a set of samples, weighted by batch size.
pub fn evaluate_samples(
    model: &Autoencoder<f32>,
    samples: &[&ContextSample],
    label_weights: &[f64],
) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for chunk in samples.chunks(128) {
        let batch = Batch::from_samples(chunk, &[])?;
        let l = model.evaluate(&batch, label_weights)?;
        let w = chunk.len() as f64 / samples.len() as f64;
        acc.image += w * l.image;
        acc.affordance += w * l.affordance;
    }
    Ok(LossBreakdown::combine(model.config(), acc.image, acc.affordance))
}

/// Trains with adam and early stopping on the validation total loss.
pub fn train(
    mut model: Autoencoder<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Autoencoder<f32>, TrainReport)> {
    config.validate()?;
    let (train_idx, val_idx) = split_by_game(&dataset.samples, config.validation_fraction, config.seed);
    if train_idx.len() < 2 || val_idx.is_empty() {
        return Err(Error::Training(format!(
            "{} samples are too few to form a training batch and a validation set",
            dataset.len()
        )));
    }
    let weights = dataset.label_weights;
    let val: Vec<&ContextSample> = val_idx.iter().map(|&i| &dataset.samples[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
    let mut adam = AdamState::new(config.adam);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut report = TrainReport {
        train: Vec::new(),
        validation: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        train_indices: train_idx.clone(),
        validation_indices: val_idx.clone(),
    };
    let mut order = train_idx;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for chunk in batches(&order, config.batch_size) {
            let samples: Vec<&ContextSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let mask: Vec<bool> = (0..chunk.len())
                .map(|_| config.affordance_dropout > 0.0 && rng.random::<f64>() < config.affordance_dropout)
                .collect();
            let batch = Batch::from_samples(&samples, &mask)?;
            let l = model.train_step(&batch, &weights)?;
            if !l.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            adam.update(&mut model)?;
            let w = chunk.len() as f64 / order.len() as f64;
            sum.total += w * l.total;
            sum.image += w * l.image;
            sum.affordance += w * l.affordance;
        }
        let v = evaluate_samples(&model, &val, &weights)?;
        if !v.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        debug!("epoch {epoch}: train {:.5} validation {:.5}", sum.total, v.total);
        report.train.push(sum);
        report.validation.push(v);
        report.stopped_epoch = epoch;
        let (improved, stop) = stopper.observe(v.total);
        if improved && config.restore_best {
            best.clone_from(&model);
        }
        if stop {
            break;
        }
    }
    report.best_epoch = stopper.best_epoch();
    info!(
        "trained {} epochs, best validation {:.5} at epoch {}",
        report.stopped_epoch,
        report.validation[report.best_epoch - 1].total,
        report.best_epoch
    );
    let out = if config.restore_best { best } else { model };
    debug_assert!(out.flat_params().iter().all(|v| v.is_finite()));
    Ok((out, report))
}
