//! Heavy-ball gradient descent with L2 regularization for the parameter update.

use serde::{Deserialize, Serialize};

use crate::error::{NsvmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        0.01
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        1e-4
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: defaults::learning_rate(),
            momentum: defaults::momentum(),
            weight_decay: defaults::weight_decay(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NsvmError::invalid("learning_rate must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NsvmError::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(NsvmError::invalid("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Optimizer state: hyperparameters plus the velocity buffer.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: OptimizerConfig,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        Sgd {
            config,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// `v <- momentum * v + grad + weight_decay * theta; theta <- theta - lr * v`.
    ///
    /// A non-finite gradient is rejected before anything is modified.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.velocity.len() || grad.len() != self.velocity.len() {
            return Err(NsvmError::DimensionMismatch {
                expected: self.velocity.len(),
                got: if theta.len() != self.velocity.len() { theta.len() } else { grad.len() },
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NsvmError::NonFinite("gradient"));
        }
        let OptimizerConfig {
            learning_rate,
            momentum,
            weight_decay,
        } = self.config;
        for ((v, t), g) in self.velocity.iter_mut().zip(theta.iter_mut()).zip(grad) {
            *v = momentum * *v + g + weight_decay * *t;
            *t -= learning_rate * *v;
        }
        Ok(())
    }
}
