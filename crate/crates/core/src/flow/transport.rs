//! Explicit Euler transport with residual accumulation.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::field::VelocityField;
use crate::annealing::{weighted_mean, AnnealedPath, PathBatch, Schedule};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax};
use crate::metrics;
use crate::rng::Rng64;

/// How the `∂_t log ρ̃` part of a step is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// Left-endpoint `τ'(t_ℓ) · r(x)` with the step weights rescaled to sum
    /// to `τ(1) - τ(0)`, so a constant factor on the target still moves every
    /// estimate by exactly its log.
    #[default]
    Riemann,
    /// Left-endpoint `τ'(t_ℓ) / T · r(x)` with no rescaling.
    Derivative,
    /// `(τ(t_{ℓ+1}) - τ(t_ℓ)) · r(x)`. Exact in time, but pairs an
    /// end-of-step weight with a start-of-step position, which biases the
    /// estimate by `O(1/T)` when `τ'` varies.
    Increment,
}

/// Mean subtracted at a step when no stored means are supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanBranch {
    /// Self-normalized weighted mean of the step's time-derivative term.
    #[default]
    PlainWeighted,
    /// Same, with an extra `1/T` factor.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportOptions {
    pub quadrature: Quadrature,
    pub mean_branch: MeanBranch,
}

/// Particles with their accumulated residuals.
///
/// `delta` holds minus the log importance weight, so weights are
/// `exp(-δ) / Σ exp(-δ)`. `lambda` accumulates the residual without the
/// subtracted means; `λ_i + δ_i` is the same for every particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub x: Array2<f64>,
    pub delta: Array1<f64>,
    pub lambda: Array1<f64>,
    pub step: usize,
    /// Sum of the per-step means subtracted so far.
    pub mean_sum: f64,
    /// Running weighted path estimate of `log Z`.
    pub path_weighted: f64,
    /// Running path estimate with uniform weights.
    pub path_uniform: f64,
}

impl Ensemble {
    pub fn new(x: Array2<f64>) -> Self {
        let n = x.nrows();
        Self {
            x,
            delta: Array1::zeros(n),
            lambda: Array1::zeros(n),
            step: 0,
            mean_sum: 0.0,
            path_weighted: 0.0,
            path_uniform: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Normalized importance weights.
    pub fn weights(&self) -> Array1<f64> {
        let lw: Vec<f64> = self.delta.iter().map(|d| -d).collect();
        Array1::from(softmax(&lw))
    }

    pub fn uniform_weights(&self) -> Array1<f64> {
        Array1::from_elem(self.len(), 1.0 / self.len() as f64)
    }

    pub fn ess(&self) -> f64 {
        metrics::ess(self.weights().as_slice().expect("fresh array")).unwrap_or(0.0)
    }

    /// `log (1/n Σ exp(λ_i))`.
    pub fn log_z_hat(&self) -> f64 {
        log_sum_exp(self.lambda.as_slice().expect("contiguous")) - (self.len() as f64).ln()
    }

    /// `max - min` of `λ_i + δ_i` over particles.
    pub fn consistency_spread(&self) -> f64 {
        let s = &self.lambda + &self.delta;
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Per-particle `∂_t log ρ̃` quadrature term for step `k`.
pub fn increments(batch: &PathBatch, schedule: Schedule, k: usize, steps: usize, q: Quadrature) -> Array1<f64> {
    let factor = match q {
        Quadrature::Riemann => schedule.riemann_weight(k, steps),
        Quadrature::Increment => schedule.increment(k, steps),
        Quadrature::Derivative => schedule.at_step(k, steps).1 / steps as f64,
    };
    &batch.log_ratio * factor
}

/// Applies step `k` given the path constituents and field values at the
/// current positions.
#[allow(clippy::too_many_arguments)]
pub fn apply_step(
    ens: &mut Ensemble,
    batch: &PathBatch,
    v: &Array2<f64>,
    div: &Array1<f64>,
    schedule: Schedule,
    steps: usize,
    stored_mean: Option<f64>,
    opts: TransportOptions,
) -> Result<()> {
    let k = ens.step;
    let n = ens.len();
    let dt = 1.0 / steps as f64;
    let (tau, _) = schedule.at_step(k, steps);
    let score = batch.score(tau);
    let inc = increments(batch, schedule, k, steps, opts.quadrature);

    let w = ens.weights();
    let weighted_inc = weighted_mean(&w, &inc);
    ens.path_weighted += weighted_inc;
    ens.path_uniform += inc.mean().unwrap_or(0.0);

    let c = match (stored_mean, opts.mean_branch) {
        (Some(m), _) => m * dt,
        (None, MeanBranch::PlainWeighted) => weighted_inc,
        (None, MeanBranch::Verbatim) => weighted_inc * dt,
    };
    let sv = (&score * v).sum_axis(Axis(1));
    Zip::from(&mut ens.lambda)
        .and(&mut ens.delta)
        .and(div)
        .and(&sv)
        .and(&inc)
        .for_each(|l, d, div, sv, inc| {
            let e = (div + sv) * dt + inc;
            *l += e;
            *d -= e - c;
        });
    ens.mean_sum += c;
    ens.x.scaled_add(dt, v);
    ens.step += 1;

    let bad = (0..n)
        .filter(|&i| {
            !ens.delta[i].is_finite() || !ens.lambda[i].is_finite() || ens.x.row(i).iter().any(|v| !v.is_finite())
        })
        .count();
    if bad > 0 {
        return Err(Error::TransportDiverged { step: k, count: bad });
    }
    Ok(())
}

/// Advances the ensemble by one step of `field`.
pub fn advance<F: VelocityField + ?Sized>(
    path: &AnnealedPath,
    field: &F,
    ens: &mut Ensemble,
    steps: usize,
    stored_mean: Option<f64>,
    opts: TransportOptions,
) -> Result<()> {
    let batch = path.eval_batch(ens.x.view())?;
    let (v, div) = field.eval(ens.step, ens.x.view())?;
    apply_step(ens, &batch, &v, &div, path.schedule(), steps, stored_mean, opts)
}

/// Draws `n` start samples and transports them through steps `0..k`.
#[allow(clippy::too_many_arguments)]
pub fn generate_samples<F: VelocityField + ?Sized>(
    path: &AnnealedPath,
    field: &F,
    means: Option<&[f64]>,
    steps: usize,
    k: usize,
    n: usize,
    rng: &mut Rng64,
    opts: TransportOptions,
) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if k > steps || k > field.steps() {
        return Err(Error::Config(format!("cannot transport to step {k} with {} trained steps", field.steps())));
    }
    if let Some(m) = means {
        if m.len() < k {
            return Err(Error::Config(format!("{} stored means for {k} steps", m.len())));
        }
    }
    let mut ens = Ensemble::new(path.sample_start(n, rng));
    for l in 0..k {
        advance(path, field, &mut ens, steps, means.map(|m| m[l]), opts)?;
    }
    Ok(ens)
}
