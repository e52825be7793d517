use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Result, RsmError};

/// AdamW hyperparameters and the per-epoch exponential learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.8,
            beta2: 0.99,
            weight_decay: 0.01,
            initial_lr: 2e-4,
            decay_factor: 0.999875,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta1) {
            return Err(RsmError::config("optimizer.beta1", "must lie in (0, 1)"));
        }
        if !open_unit(self.beta2) {
            return Err(RsmError::config("optimizer.beta2", "must lie in (0, 1)"));
        }
        if !(self.initial_lr > 0.0) {
            return Err(RsmError::config("optimizer.initial_lr", "must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(RsmError::config("optimizer.decay_factor", "must lie in (0, 1]"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(RsmError::config("optimizer.weight_decay", "must be non-negative"));
        }
        if !(self.epsilon > 0.0) {
            return Err(RsmError::config("optimizer.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// `initial_lr · decay_factor^epoch`.
pub fn lr_at_epoch(epoch: u64, cfg: &OptimizerConfig) -> f64 {
    cfg.initial_lr * cfg.decay_factor.powf(epoch as f64)
}

/// A trainable matrix with its gradient and AdamW moment estimates.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub gradient: Matrix,
    pub moment1: Matrix,
    pub moment2: Matrix,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            gradient: Matrix::zeros(r, c),
            moment1: Matrix::zeros(r, c),
            moment2: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    /// One decoupled-weight-decay Adam update; clears the gradient afterwards.
    pub fn adamw_step(&mut self, lr: f64, cfg: &OptimizerConfig) -> Result<()> {
        if !(lr > 0.0) {
            return Err(RsmError::InvalidInput(format!("learning rate {lr} must be positive")));
        }
        if !self.gradient.is_finite() {
            return Err(RsmError::NonFinite(format!("gradient of parameter `{}`", self.name)));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bias1 = 1.0 - cfg.beta1.powf(t);
        let bias2 = 1.0 - cfg.beta2.powf(t);
        let decay = 1.0 - lr * cfg.weight_decay;

        let value = self.value.data_mut();
        let grad = self.gradient.data();
        let m = self.moment1.data_mut();
        let v = self.moment2.data_mut();
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            value[i] = value[i] * decay - lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        self.gradient.fill(0.0);
        Ok(())
    }
}

/// Free-function form of [`Parameter::adamw_step`].
pub fn adamw_step(p: &mut Parameter, lr: f64, cfg: &OptimizerConfig) -> Result<()> {
    p.adamw_step(lr, cfg)
}
