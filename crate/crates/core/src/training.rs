//! Mini-batch Adam training with early stopping on validation loss.

use std::io::Write;

use fiberwatch_nn::{AdamConfig, AdamState, Module};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    /// Rescales the global gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    /// The learning rate is multiplied by `lr_decay` after this many epochs
    /// without improvement.
    pub lr_patience: usize,
    pub lr_decay: f64,
    pub min_learning_rate: f64,
    /// Seeds weight initialization and batch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 64,
            patience: 10,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            lr_patience: 4,
            lr_decay: 0.5,
            min_learning_rate: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(CoreError::InvalidInput("batch_size and max_epochs must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0)
        {
            return Err(CoreError::InvalidInput(format!("invalid Adam settings {a:?}")));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(CoreError::InvalidInput("clip_norm must be positive and lr_decay in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Whether this epoch produced the kept checkpoint so far.
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingCurve {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().rev().find(|e| e.improved)
    }

    /// Validation losses of successive kept checkpoints.
    pub fn checkpoint_losses(&self) -> Vec<f64> {
        self.epochs.iter().filter(|e| e.improved).map(|e| e.validation_loss).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,validation_loss,improved")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.validation_loss, e.improved as u8)?;
        }
        Ok(())
    }
}

/// A model that can run one gradient step on a batch and evaluate a mean
/// loss on held-out examples.
pub trait Trainable: Module + Clone {
    type Example;

    /// Forward and backward pass; gradients accumulate into the parameters.
    /// Returns the batch mean loss.
    fn accumulate_gradients(&mut self, batch: &[&Self::Example]) -> Result<f64>;

    /// Mean loss over `examples` without touching gradients.
    fn loss(&self, examples: &[&Self::Example]) -> Result<f64>;
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_gradients<M: Module + ?Sized>(model: &mut M, max_norm: f64) -> f64 {
    let mut params = model.params_mut();
    let norm = params
        .iter()
        .flat_map(|(_, p)| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, p) in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

const EVAL_CHUNK: usize = 512;

/// Example-weighted mean loss in chunks.
pub fn mean_loss<M: Trainable>(model: &M, examples: &[M::Example]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let refs: Vec<&M::Example> = chunk.iter().collect();
        total += model.loss(&refs)? * chunk.len() as f64;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Trains `model` in place and leaves it at the best validation checkpoint.
/// With no validation examples the training loss drives early stopping.
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &[M::Example],
    validation: &[M::Example],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainingCurve> {
    config.validate()?;
    if train.is_empty() {
        return Err(CoreError::InvalidInput("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut adam = AdamState::new(config.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = TrainingCurve::default();
    let mut best: Option<(f64, M)> = None;
    let mut stale = 0;
    let mut plateau = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&M::Example> = idx.iter().map(|&i| &train[i]).collect();
            model.zero_grad();
            let loss = model.accumulate_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch });
            }
            if let Some(max) = config.clip_norm {
                clip_gradients(model, max);
            }
            adam.update(model)?;
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let validation_loss = if validation.is_empty() {
            train_loss
        } else {
            mean_loss(model, validation)?
        };
        if !validation_loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { epoch });
        }
        let improved = best.as_ref().is_none_or(|(b, _)| validation_loss < *b);
        if improved {
            best = Some((validation_loss, model.clone()));
            stale = 0;
            plateau = 0;
        } else {
            stale += 1;
            plateau += 1;
            if config.lr_patience > 0 && plateau >= config.lr_patience {
                let lr = &mut adam.config.learning_rate;
                *lr = (*lr * config.lr_decay).max(config.min_learning_rate);
                plateau = 0;
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            improved,
        };
        progress(&record);
        curve.epochs.push(record);
        if stale >= config.patience {
            break;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(curve)
}
