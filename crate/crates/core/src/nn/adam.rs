//! Adam with a reduce-on-plateau learning-rate rule.

use serde::{Deserialize, Serialize};

use super::mlp::NetParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without improvement before the rate is scaled by `factor`.
    pub patience: usize,
    pub factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, patience: 200, factor: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    lr: f64,
    m: NetParams,
    v: NetParams,
    t: u64,
    best: f64,
    since_best: usize,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &NetParams) -> Self {
        Self {
            config,
            lr: config.lr,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. A non-finite gradient leaves both the
    /// parameters and the optimizer state untouched.
    pub fn step(&mut self, params: &mut NetParams, grad: &NetParams) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        if grad.num_params() != params.num_params() {
            return Err(Error::DimensionMismatch {
                expected: params.num_params(),
                got: grad.num_params(),
            });
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let lr = self.lr;
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grad.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Records the epoch loss; returns `true` when the rate was just reduced.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            return false;
        }
        self.since_best += 1;
        if self.since_best >= self.config.patience {
            self.lr *= self.config.factor;
            self.since_best = 0;
            return true;
        }
        false
    }
}
