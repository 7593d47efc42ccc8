//! Minibatch training with cross-entropy loss, Adam, plateau learning-rate
//! decay and best-weights checkpointing.
//!
//! Train accuracy is measured on the fly over each epoch's batches (before
//! the corresponding update), so on augmented data it can sit below held-out
//! accuracy. That gap is expected.

mod adam;
mod backward;
mod loss;
mod scheduler;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use backward::{backward, BatchGradients};
pub use loss::{cross_entropy_loss, one_hot, sample_loss, PROB_FLOOR};
pub use scheduler::{reduce_lr_on_plateau, PlateauScheduler};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::ModelSpec;
use crate::tensor::Tensor;

/// A normalized input with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    /// Fraction of the training data held out for validation when no
    /// explicit validation set is given.
    pub validation_split: f64,
    pub seed: u64,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            batch_size: 32,
            epochs: 40,
            plateau_factor: 0.2,
            plateau_patience: 5,
            validation_split: 0.1,
            seed: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if self.plateau_patience == 0 {
            return bad("plateau patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return bad(format!("validation split must lie in [0, 1), got {}", self.validation_split));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }

    fn adam(&self, learning_rate: f64) -> AdamHyper {
        AdamHyper {
            learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Weights from the best monitored epoch.
    pub model: ModelSpec,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch the returned weights come from (0 if no epoch ran).
    pub best_epoch: usize,
}

/// Sidecar written next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub monitored_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
}

pub fn checkpoint_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Seeded shuffle then split off `fraction` of `examples` for validation.
/// Returns `(train, validation)`.
pub fn split_validation(examples: &[Example], fraction: f64, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5711));
    let n_val = (examples.len() as f64 * fraction).round() as usize;
    let n_val = n_val.min(examples.len().saturating_sub(1));
    let val = order[..n_val].iter().map(|&i| examples[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| examples[i].clone()).collect();
    (train, val)
}

/// Mean loss and accuracy of `model` over `examples`.
pub fn loss_and_accuracy(model: &ModelSpec, examples: &[Example]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("nothing to score".into()));
    }
    let scored: Vec<(f64, bool)> = examples
        .par_iter()
        .map(|e| {
            let p = model.forward(&e.input)?;
            Ok((sample_loss(p.data(), e.label), p.argmax() == e.label))
        })
        .collect::<Result<_>>()?;
    let n = examples.len() as f64;
    let loss = scored.iter().map(|s| s.0).sum::<f64>() / n;
    let acc = scored.iter().filter(|s| s.1).count() as f64 / n;
    Ok((loss, acc))
}

/// Trains `model` and returns the weights of the best epoch. The monitored
/// value is validation accuracy, or train accuracy when `val` is empty.
pub fn fit(model: ModelSpec, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.weights());
    let mut scheduler = PlateauScheduler::new(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = scheduler.learning_rate();
        let hyper = cfg.adam(lr);
        order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Tensor> = chunk.iter().map(|&i| train[i].input.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let g = backward(&model, &inputs, &labels)?;
            loss_sum += g.loss * chunk.len() as f64;
            correct += g.correct;
            adam_step(model.weights_mut(), &g.grads, &mut state, &hyper)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_accuracy = correct as f64 / train.len() as f64;
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(&model, val)?;
            (Some(l), Some(a))
        };
        let monitored = val_accuracy.unwrap_or(train_accuracy);
        log::info!(
            "epoch {epoch}: loss {train_loss:.4} acc {train_accuracy:.4} val_acc {val_accuracy:?} lr {lr:.6}"
        );
        history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|b| monitored > b.0) {
            if let Some(path) = &cfg.checkpoint_path {
                crate::format::save_model(path, &crate::format::ModelFile::Float(model.clone()))?;
                let meta = CheckpointMeta {
                    epoch,
                    monitored_accuracy: monitored,
                    val_accuracy,
                    learning_rate: lr,
                };
                std::fs::write(checkpoint_sidecar(path), serde_json::to_vec_pretty(&meta)?)?;
            }
            best = Some((monitored, epoch, model.weights().to_vec()));
        }
        scheduler.observe(monitored);
    }

    let best_epoch = match best {
        Some((_, epoch, weights)) => {
            model = ModelSpec::new(model.arch.clone(), weights)?;
            epoch
        }
        None => 0,
    };
    Ok(FitOutcome {
        model,
        history,
        best_epoch,
    })
}
