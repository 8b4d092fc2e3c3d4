use serde::{Deserialize, Serialize};

use super::GradBundle;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adam with L2 weight decay folded into the gradient.
    Adam,
    /// Adam with decoupled weight decay.
    AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Moment buffers and step count for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub config: OptConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptState {
    pub fn new(config: OptConfig, param_count: usize) -> Self {
        Self {
            config,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. If `clip_norm` is set the gradient is
    /// rescaled to that global L2 norm first. Returns the pre-clip norm.
    pub fn step(&mut self, params: &mut [f64], grads: &GradBundle, clip_norm: Option<f64>) -> Result<f64> {
        if params.len() != self.m.len() || grads.values.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, params {} grads {}",
                self.m.len(),
                params.len(),
                grads.values.len()
            )));
        }
        let norm = grads.norm();
        let scale = match clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let mut g = grads.values[i] * scale;
            if c.kind == OptimizerKind::Adam && c.weight_decay != 0.0 {
                g += c.weight_decay * params[i];
            }
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let mut update = m_hat / (v_hat.sqrt() + c.eps);
            if c.kind == OptimizerKind::AdamW {
                update += c.weight_decay * params[i];
            }
            params[i] -= c.lr * update;
        }
        Ok(norm)
    }
}
