//! Minibatch training loop and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{backward, Example};
use super::loss::argmax;
use super::optim::{Optimizer, OptimizerConfig};
use crate::error::{Error, Result};
use crate::model::CrateModel;

/// Batch loss above which training aborts.
pub const DIVERGENCE_LOSS: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean training loss over the epoch (losses evaluated before each update).
    pub loss: f64,
    /// Training accuracy over the epoch, same convention.
    pub acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: CrateModel,
    pub optimizer: Optimizer,
    pub epoch: usize,
    pub step: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochStats>,
}

impl TrainState {
    pub fn new(model: CrateModel, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let optimizer = Optimizer::new(config, &model);
        Ok(TrainState { model, optimizer, epoch: 0, step: 0, rng, history: Vec::new() })
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn run_epoch(&mut self, data: &[Example]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = vec![0.0; data.len()];
        let mut correct = 0;
        let bs = self.optimizer.config.batch_size;
        for idx in order.chunks(bs) {
            let batch: Vec<Example> = idx.iter().map(|&i| data[i].clone()).collect();
            let g = backward(&self.model, &batch)?;
            if g.loss > DIVERGENCE_LOSS {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {} step {}: batch loss {:.3e}",
                    self.epoch + 1,
                    self.step,
                    g.loss
                )));
            }
            for (&i, &l) in idx.iter().zip(&g.losses) {
                losses[i] = l;
            }
            correct += g.correct;
            self.optimizer.step(&mut self.model, &g.grad);
            self.step += 1;
            if let Some(p) = self.model.first_non_finite() {
                return Err(Error::Numerical(format!("non-finite parameters after step {}: {p}", self.step)));
            }
        }
        let stats = EpochStats { loss: losses.iter().sum::<f64>() / data.len() as f64, acc: correct as f64 / data.len() as f64 };
        self.epoch += 1;
        self.history.push(stats);
        Ok(stats)
    }

    /// Runs the configured number of epochs, calling `on_epoch` after each.
    pub fn train(&mut self, data: &[Example], mut on_epoch: impl FnMut(usize, &EpochStats)) -> Result<()> {
        while self.epoch < self.optimizer.config.epochs {
            let stats = self.run_epoch(data)?;
            on_epoch(self.epoch, &stats);
        }
        Ok(())
    }
}

/// Predicted class per example (argmax, ties toward the lowest index).
pub fn predict(model: &CrateModel, data: &[Example]) -> Result<Vec<usize>> {
    data.par_iter().map(|ex| Ok(argmax(model.forward_patches(&ex.patches, false)?.logits.view()))).collect()
}

/// Top-1 accuracy; 0 for an empty set.
pub fn evaluate_accuracy(model: &CrateModel, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(model, data)?;
    let hits = pred.iter().zip(data).filter(|(p, ex)| **p == ex.label).count();
    Ok(hits as f64 / data.len() as f64)
}
