//! Schedules and annealed density paths.
//!
//! Both path kinds share one form: `log ρ̃(x, t) = log a(x) + τ(t) · r(x)`.
//! For the geometric kind `a` is the reference and `r = log ν̃ - log a`; for
//! the tempered kind `a` is the prior and `r` is the log-likelihood. So
//! `∂_t log ρ̃ = τ'(t) · r(x)` and `∇ log ρ̃ = ∇a + τ ∇r`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng64;
use crate::targets::{check_point, LogDensity, Sampler, SharedDensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Linear,
    Quadratic,
    #[default]
    Cosine,
}

impl Schedule {
    /// `(τ(t), τ'(t))`.
    pub fn tau(self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(self.tau_unchecked(t))
    }

    pub(crate) fn tau_unchecked(self, t: f64) -> (f64, f64) {
        match self {
            Schedule::Linear => (t, 1.0),
            Schedule::Quadratic => (t * t, 2.0 * t),
            Schedule::Cosine => {
                if t == 0.0 {
                    (0.0, 0.0)
                } else if t == 1.0 {
                    (1.0, 0.0)
                } else {
                    (0.5 * (1.0 - (PI * t).cos()), 0.5 * PI * (PI * t).sin())
                }
            }
        }
    }

    /// `τ` and `τ'` at `t = k / steps`.
    pub fn at_step(self, k: usize, steps: usize) -> (f64, f64) {
        self.tau_unchecked(k as f64 / steps as f64)
    }

    /// `τ((k+1)/T) - τ(k/T)`.
    pub fn increment(self, k: usize, steps: usize) -> f64 {
        self.at_step(k + 1, steps).0 - self.at_step(k, steps).0
    }

    /// Left-endpoint weight `τ'(k/T)` rescaled so the `T` weights sum to
    /// `τ(1) - τ(0)`. Falls back to [`Self::increment`] when every left
    /// derivative vanishes (e.g. `T = 1` on a schedule flat at zero).
    pub fn riemann_weight(self, k: usize, steps: usize) -> f64 {
        let total: f64 = (0..steps).map(|j| self.at_step(j, steps).1).sum();
        if total > 0.0 {
            let span = self.at_step(steps, steps).0 - self.at_step(0, steps).0;
            self.at_step(k, steps).1 * span / total
        } else {
            self.increment(k, steps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    /// `μ^{1-τ} ν̃^τ` from a normalized reference `μ` to a target `ν̃`.
    Geometric,
    /// `π L^τ` from a normalized prior `π` with likelihood `L`.
    Tempered,
}

/// One point of the path at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub log_rho: f64,
    pub score: Vec<f64>,
    pub dt_log_rho: f64,
}

/// Constituent values for a batch of points, valid at every `t`.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub log_start: Array1<f64>,
    pub log_ratio: Array1<f64>,
    pub grad_start: Array2<f64>,
    pub grad_ratio: Array2<f64>,
}

impl PathBatch {
    pub fn len(&self) -> usize {
        self.log_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_start.is_empty()
    }

    pub fn log_rho(&self, tau: f64) -> Array1<f64> {
        &self.log_start + &(&self.log_ratio * tau)
    }

    pub fn score(&self, tau: f64) -> Array2<f64> {
        let mut s = self.grad_start.clone();
        s.scaled_add(tau, &self.grad_ratio);
        s
    }

    /// `∂_t log ρ̃` given `τ'`.
    pub fn dt_log_rho(&self, dtau: f64) -> Array1<f64> {
        &self.log_ratio * dtau
    }
}

pub struct AnnealedPath {
    kind: PathKind,
    start: SharedDensity,
    end: SharedDensity,
    sampler: Arc<dyn Sampler>,
    schedule: Schedule,
}

impl std::fmt::Debug for AnnealedPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnealedPath")
            .field("kind", &self.kind)
            .field("dim", &self.dim())
            .field("schedule", &self.schedule)
            .finish()
    }
}

impl AnnealedPath {
    /// `start` must be normalized; `sampler` draws from it exactly.
    pub fn new(
        kind: PathKind,
        start: SharedDensity,
        sampler: Arc<dyn Sampler>,
        end: SharedDensity,
        schedule: Schedule,
    ) -> Result<Self> {
        if start.dim() != end.dim() {
            return Err(Error::DimensionMismatch { expected: start.dim(), got: end.dim() });
        }
        Ok(Self { kind, start, end, sampler, schedule })
    }

    /// Geometric path from a sampleable normalized reference.
    pub fn geometric<R>(reference: Arc<R>, target: SharedDensity, schedule: Schedule) -> Result<Self>
    where
        R: LogDensity + Sampler + 'static,
    {
        Self::new(PathKind::Geometric, reference.clone(), reference, target, schedule)
    }

    /// Tempered path from a sampleable normalized prior.
    pub fn tempered<P>(prior: Arc<P>, likelihood: SharedDensity, schedule: Schedule) -> Result<Self>
    where
        P: LogDensity + Sampler + 'static,
    {
        Self::new(PathKind::Tempered, prior.clone(), prior, likelihood, schedule)
    }

    pub fn with_schedule(&self, schedule: Schedule) -> Self {
        Self {
            kind: self.kind,
            start: self.start.clone(),
            end: self.end.clone(),
            sampler: self.sampler.clone(),
            schedule,
        }
    }

    /// Same path with the end density replaced.
    pub fn with_end(&self, end: SharedDensity) -> Result<Self> {
        Self::new(self.kind, self.start.clone(), self.sampler.clone(), end, self.schedule)
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.start.dim()
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn end(&self) -> &SharedDensity {
        &self.end
    }

    /// `log Z(1) - log Z(0)` when the end density knows its normalizer.
    pub fn exact_log_z(&self) -> Option<f64> {
        match self.kind {
            PathKind::Geometric => self.end.log_normalizer(),
            PathKind::Tempered => None,
        }
    }

    pub fn sample_start(&self, n: usize, rng: &mut Rng64) -> Array2<f64> {
        self.sampler.sample(n, rng)
    }

    fn names(&self) -> (&'static str, &'static str) {
        match self.kind {
            PathKind::Geometric => ("reference", "target"),
            PathKind::Tempered => ("prior", "likelihood"),
        }
    }

    /// `(log ρ̃, ∇ log ρ̃, ∂_t log ρ̃)` at one point.
    pub fn eval(&self, x: &[f64], t: f64) -> Result<PathPoint> {
        check_point(self.dim(), x)?;
        let (tau, dtau) = self.schedule.tau(t)?;
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let b = self.eval_batch(xs)?;
        Ok(PathPoint {
            log_rho: b.log_rho(tau)[0],
            score: b.score(tau).row(0).to_vec(),
            dt_log_rho: b.dt_log_rho(dtau)[0],
        })
    }

    /// Constituent log-densities and scores for every row, in parallel chunks.
    /// Fails on the first non-finite value, naming the constituent.
    pub fn eval_batch(&self, xs: ArrayView2<f64>) -> Result<PathBatch> {
        let (batch, bad) = self.eval_batch_raw(xs)?;
        match bad {
            Some(constituent) => Err(Error::NonFiniteDensity { constituent }),
            None => Ok(batch),
        }
    }

    fn eval_batch_raw(&self, xs: ArrayView2<f64>) -> Result<(PathBatch, Option<&'static str>)> {
        let d = self.dim();
        if xs.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: xs.ncols() });
        }
        let n = xs.nrows();
        let (start_name, end_name) = self.names();
        let geometric = self.kind == PathKind::Geometric;
        let parts = par::map_chunks(n, par::CHUNK, |r| {
            let x = xs.slice(s![r, ..]);
            let m = x.nrows();
            let mut la = Array1::zeros(m);
            let mut ga = Array2::zeros((m, d));
            let mut lr = Array1::zeros(m);
            let mut gr = Array2::zeros((m, d));
            self.start.eval_rows(x, la.view_mut(), ga.view_mut());
            self.end.eval_rows(x, lr.view_mut(), gr.view_mut());
            let bad = if la.iter().chain(ga.iter()).any(|v| !v.is_finite()) {
                Some(start_name)
            } else if lr.iter().chain(gr.iter()).any(|v| !v.is_finite()) {
                Some(end_name)
            } else {
                None
            };
            if geometric {
                lr -= &la;
                gr -= &ga;
            }
            (la, ga, lr, gr, bad)
        });
        let mut out = PathBatch {
            log_start: Array1::zeros(n),
            log_ratio: Array1::zeros(n),
            grad_start: Array2::zeros((n, d)),
            grad_ratio: Array2::zeros((n, d)),
        };
        let mut first_bad = None;
        let mut row = 0;
        for (la, ga, lr, gr, bad) in parts {
            first_bad = first_bad.or(bad);
            let m = la.len();
            out.log_start.slice_mut(s![row..row + m]).assign(&la);
            out.grad_start.slice_mut(s![row..row + m, ..]).assign(&ga);
            out.log_ratio.slice_mut(s![row..row + m]).assign(&lr);
            out.grad_ratio.slice_mut(s![row..row + m, ..]).assign(&gr);
            row += m;
        }
        Ok((out, first_bad))
    }

    /// Log-density and score of `ρ̃(·, t)` for every row at a fixed `τ`.
    /// Non-finite rows are passed through for the caller to reject.
    pub fn log_rho_and_score(&self, xs: ArrayView2<f64>, tau: f64) -> Result<(Array1<f64>, Array2<f64>)> {
        let (b, _) = self.eval_batch_raw(xs)?;
        Ok((b.log_rho(tau), b.score(tau)))
    }

    /// [`eval_batch`](Self::eval_batch) without the finiteness check.
    pub fn eval_batch_lenient(&self, xs: ArrayView2<f64>) -> Result<PathBatch> {
        Ok(self.eval_batch_raw(xs)?.0)
    }
}

/// Weighted mean `Σ w_i v_i` of per-particle values.
pub fn weighted_mean(weights: &Array1<f64>, values: &Array1<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(weights).and(values).for_each(|w, v| {
        if *w != 0.0 {
            acc += w * v;
        }
    });
    acc
}
