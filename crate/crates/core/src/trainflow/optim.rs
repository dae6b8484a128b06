//! Optimizer settings and AdamW with linear warmup.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::Backend;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub warmup_init_lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub batch_prompts: usize,
    pub group_size: usize,
    pub eval_every: usize,
    pub global_seed: u64,
}

impl OptimConfig {
    /// Toy-scale defaults: lr 1e-2 tabular, 1e-3 neural, warmup 50 steps from lr/10.
    pub fn toy_default(backend: Backend) -> Self {
        let learning_rate = match backend {
            Backend::Tabular => 1e-2,
            Backend::Neural => 1e-3,
        };
        Self {
            learning_rate,
            warmup_steps: 50,
            warmup_init_lr: learning_rate / 10.0,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            steps: 500,
            batch_prompts: 32,
            group_size: 8,
            eval_every: 50,
            global_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.warmup_init_lr > 0.0 && self.warmup_init_lr.is_finite()) {
            return Err(config_err!("warmup_init_lr must be positive, got {}", self.warmup_init_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(config_err!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(config_err!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.batch_prompts == 0 {
            return Err(config_err!("batch_prompts must be positive"));
        }
        if self.eval_every == 0 || self.steps % self.eval_every != 0 {
            return Err(config_err!(
                "eval_every must be positive and divide steps ({} % {} != 0)",
                self.steps,
                self.eval_every
            ));
        }
        Ok(())
    }

    /// Learning rate used for the update at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            let frac = step as f64 / self.warmup_steps as f64;
            self.warmup_init_lr + (self.learning_rate - self.warmup_init_lr) * frac
        } else {
            self.learning_rate
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One descent step on `loss_grad` with decoupled weight decay.
    pub fn step(&mut self, cfg: &OptimConfig, lr: f64, params: &mut [f64], loss_grad: &[f64]) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = loss_grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.adam_eps) + cfg.weight_decay * params[i]);
        }
    }
}
