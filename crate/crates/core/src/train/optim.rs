//! SGD with momentum and Lion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CrateModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Lion,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" | "sgd-momentum" => Ok(OptimizerKind::Sgd),
            "lion" => Ok(OptimizerKind::Lion),
            other => Err(Error::config(format!("unknown optimizer {other:?} (expected sgd or lion)"))),
        }
    }
}

/// Optimizer and schedule settings.
///
/// Desk defaults: Lion, lr 1e-4, weight decay 0.01, batch 64, 20 epochs.
/// The ImageNet-21k recipe this scales down from used Lion with lr 9.6e-5,
/// weight decay 0.05, batch 4096 and 90 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// Lion interpolation β1, or SGD momentum.
    pub beta1: f64,
    /// Lion moment decay β2; unused by SGD.
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimizerKind::Lion, lr: 1e-4, weight_decay: 0.01, beta1: 0.9, beta2: 0.99, batch_size: 64, epochs: 20, seed: 0 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be finite and nonnegative"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be positive"));
        }
        Ok(())
    }
}

/// Per-parameter moment buffer, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub moments: CrateModel,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, model: &CrateModel) -> Self {
        Optimizer { config, moments: model.zeros_like() }
    }

    /// One update of `model` with gradient `grad`. Weight decay applies only
    /// to groups whose `decays()` is true.
    pub fn step(&mut self, model: &mut CrateModel, grad: &CrateModel) {
        let c = &self.config;
        let mut params = model.params_mut();
        let grads = grad.params();
        let mut moments = self.moments.params_mut();
        for ((p, g), m) in params.iter_mut().zip(&grads).zip(moments.iter_mut()) {
            let wd = if p.group.decays() { c.weight_decay } else { 0.0 };
            let ps = p.values.as_slice_memory_order_mut().expect("contiguous");
            let gs = g.values.as_slice_memory_order().expect("contiguous");
            let ms = m.values.as_slice_memory_order_mut().expect("contiguous");
            match c.kind {
                OptimizerKind::Lion => {
                    for ((theta, &gi), mi) in ps.iter_mut().zip(gs).zip(ms.iter_mut()) {
                        let update = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                        let sign = if update > 0.0 {
                            1.0
                        } else if update < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *theta = *theta * (1.0 - c.lr * wd) - c.lr * sign;
                        *mi = c.beta2 * *mi + (1.0 - c.beta2) * gi;
                    }
                }
                OptimizerKind::Sgd => {
                    for ((theta, &gi), vi) in ps.iter_mut().zip(gs).zip(ms.iter_mut()) {
                        let g = gi + wd * *theta;
                        *vi = c.beta1 * *vi + g;
                        *theta -= c.lr * *vi;
                    }
                }
            }
        }
    }
}
