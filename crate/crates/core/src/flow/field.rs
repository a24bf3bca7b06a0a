use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::annealing::Schedule;
use crate::error::{Error, Result};
use crate::math::LN_2PI;
use crate::nn::NetParams;

/// A piecewise-constant-in-time velocity field, one piece per step.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    /// Number of steps the field is defined for.
    fn steps(&self) -> usize;

    /// Velocities (`n × D`) and exact divergences (`n`) at step `step`.
    fn eval(&self, step: usize, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)>;
}

/// Per-step training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMeta {
    pub epochs: usize,
    pub loss: f64,
    /// Mean squared residual over the batch variance of the time derivative.
    pub criterion: f64,
    pub converged: bool,
    pub lr: f64,
    /// ESS of the training pool when the step began.
    pub pool_ess: f64,
}

/// Trained per-step networks and the stored weighted means of `∂_t log ρ̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub params: Vec<NetParams>,
    pub means: Vec<f64>,
    pub meta: Vec<StepMeta>,
}

impl FlowModel {
    pub fn new(params: Vec<NetParams>, means: Vec<f64>, meta: Vec<StepMeta>) -> Result<Self> {
        let m = Self { params, means, meta };
        m.validate()?;
        Ok(m)
    }

    pub fn empty() -> Self {
        Self { params: Vec::new(), means: Vec::new(), meta: Vec::new() }
    }

    pub fn push(&mut self, params: NetParams, mean: f64, meta: StepMeta) {
        self.params.push(params);
        self.means.push(mean);
        self.meta.push(meta);
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::Schema("flow has no steps".into()));
        }
        if self.means.len() != self.params.len() {
            return Err(Error::Schema(format!(
                "{} stored means for {} steps",
                self.means.len(),
                self.params.len()
            )));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Schema("non-finite stored mean".into()));
        }
        let dim = self.params[0].dim;
        for p in &self.params {
            p.validate()?;
            if p.dim != dim {
                return Err(Error::Schema("steps disagree on dimension".into()));
            }
        }
        Ok(())
    }

    /// Fraction of steps whose training reached the threshold.
    pub fn converged_fraction(&self) -> f64 {
        if self.meta.is_empty() {
            return 0.0;
        }
        self.meta.iter().filter(|m| m.converged).count() as f64 / self.meta.len() as f64
    }
}

impl VelocityField for FlowModel {
    fn dim(&self) -> usize {
        self.params.first().map_or(0, |p| p.dim)
    }

    fn steps(&self) -> usize {
        self.params.len()
    }

    fn eval(&self, step: usize, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let p = self.params.get(step).ok_or_else(|| {
            Error::Config(format!("step {step} requested from a flow with {} steps", self.params.len()))
        })?;
        p.eval_batch(xs)
    }
}

/// Exact velocity for the geometric path from `N(0, I)` to
/// `exp(-|x|² / (2 s²))`.
///
/// Along that path `ρ(·, t) = N(0, I / g)` with `g(τ) = 1 - τ + τ / s²`, and
/// `v = -ġ / (2g) · x` solves the continuity equation exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianOracle {
    pub dim: usize,
    pub target_std: f64,
    pub schedule: Schedule,
    pub steps: usize,
}

impl GaussianOracle {
    fn precision(&self, k: usize) -> (f64, f64, f64) {
        let (tau, dtau) = self.schedule.at_step(k, self.steps);
        let inv = 1.0 / (self.target_std * self.target_std);
        let g = 1.0 - tau + tau * inv;
        let g_dot = dtau * (inv - 1.0);
        (g, g_dot, dtau)
    }

    /// Velocity coefficient `c` with `v = c x`.
    pub fn coefficient(&self, k: usize) -> f64 {
        let (g, g_dot, _) = self.precision(k);
        -g_dot / (2.0 * g)
    }

    /// Exact `E[∂_t log ρ̃]` under `ρ(·, t_k)`, one per step.
    pub fn means(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|k| {
                let (g, g_dot, dtau) = self.precision(k);
                self.dim as f64 * (-0.5 * g_dot / g + 0.5 * dtau * LN_2PI)
            })
            .collect()
    }

    /// `log ∫ exp(-|x|² / (2 s²)) dx`.
    pub fn log_z(&self) -> f64 {
        self.dim as f64 * (self.target_std.ln() + 0.5 * LN_2PI)
    }
}

impl VelocityField for GaussianOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn eval(&self, step: usize, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if xs.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: xs.ncols() });
        }
        let c = self.coefficient(step);
        Ok((xs.mapv(|x| c * x), Array1::from_elem(xs.nrows(), c * self.dim as f64)))
    }
}
