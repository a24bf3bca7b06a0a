//! Log-Gaussian Cox process on an `M × M` grid.
//!
//! Cells are indexed by integer grid coordinates; the prior covariance is
//! `σ² exp(-|u - v| / (M β))` on those coordinates.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::distr::Distribution;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use super::{standard_normals, LogDensity, Sampler};
use crate::error::{Error, Result};
use crate::math::LN_2PI;
use crate::rng::{self, Rng64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LgcpSpec {
    pub grid: usize,
    pub variance: f64,
    pub beta: f64,
    /// The prior mean is `log(mean_count) - variance`.
    pub mean_count: f64,
}

impl Default for LgcpSpec {
    fn default() -> Self {
        Self { grid: 40, variance: 1.91, beta: 1.0 / 33.0, mean_count: 126.0 }
    }
}

impl LgcpSpec {
    pub fn dim(&self) -> usize {
        self.grid * self.grid
    }

    /// Per-cell intensity scale `1 / M²`.
    pub fn alpha(&self) -> f64 {
        1.0 / self.dim() as f64
    }

    pub fn prior_mean(&self) -> f64 {
        self.mean_count.ln() - self.variance
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(Error::Config("lgcp grid must be positive".into()));
        }
        if !(self.variance > 0.0 && self.beta > 0.0 && self.mean_count > 0.0) {
            return Err(Error::Config("lgcp variance, beta and mean count must be positive".into()));
        }
        Ok(())
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.grid;
        let len = m as f64 * self.beta;
        DMatrix::from_fn(self.dim(), self.dim(), |a, b| {
            let (ai, aj) = ((a / m) as f64, (a % m) as f64);
            let (bi, bj) = ((b / m) as f64, (b % m) as f64);
            let r = ((ai - bi).powi(2) + (aj - bj).powi(2)).sqrt();
            self.variance * (-r / len).exp()
        })
    }
}

/// Gaussian process prior over the latent log-intensity. Normalized.
#[derive(Debug, Clone)]
pub struct LgcpPrior {
    mean: f64,
    chol: Array2<f64>,
    precision: Array2<f64>,
    log_det: f64,
}

fn to_ndarray(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

impl LgcpPrior {
    pub fn new(spec: &LgcpSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.covariance();
        let chol = nalgebra::Cholesky::new(k)
            .ok_or_else(|| Error::Cholesky(format!("covariance of a {0}x{0} grid is not positive definite", spec.grid)))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self { mean: spec.prior_mean(), chol: to_ndarray(&l), precision: to_ndarray(&precision), log_det })
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> &Array2<f64> {
        &self.chol
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    fn log_const(&self) -> f64 {
        0.5 * (self.log_det + self.chol.nrows() as f64 * LN_2PI)
    }
}

impl LogDensity for LgcpPrior {
    fn dim(&self) -> usize {
        self.chol.nrows()
    }

    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = Array1::from_iter(x.iter().map(|v| v - self.mean));
        let g = self.precision.dot(&r);
        let quad = r.dot(&g);
        for (o, v) in grad.iter_mut().zip(&g) {
            *o = -v;
        }
        -0.5 * quad - self.log_const()
    }

    fn eval_rows(&self, xs: ArrayView2<f64>, mut logp: ArrayViewMut1<f64>, mut grad: ArrayViewMut2<f64>) {
        let r = xs.mapv(|v| v - self.mean);
        let g = r.dot(&self.precision);
        let c = self.log_const();
        Zip::from(&mut logp).and(r.rows()).and(g.rows()).for_each(|lp, r, g| *lp = -0.5 * r.dot(&g) - c);
        Zip::from(&mut grad).and(&g).for_each(|o, g| *o = -g);
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(0.0)
    }
}

impl Sampler for LgcpPrior {
    fn sample(&self, n: usize, rng: &mut Rng64) -> Array2<f64> {
        let z = standard_normals(n, self.dim(), rng);
        z.dot(&self.chol.t()) + self.mean
    }
}

/// `log L(x) = Σ_i [y_i x_i - α e^{x_i}]`; the `-log y_i!` terms are dropped.
#[derive(Debug, Clone)]
pub struct LgcpLikelihood {
    counts: Array1<f64>,
    alpha: f64,
}

impl LgcpLikelihood {
    pub fn new(spec: &LgcpSpec, counts: &LgcpCounts) -> Result<Self> {
        if counts.grid != spec.grid || counts.counts.len() != spec.dim() {
            return Err(Error::Config(format!(
                "counts for a {} grid ({} cells) do not match grid {}",
                counts.grid,
                counts.counts.len(),
                spec.grid
            )));
        }
        Ok(Self { counts: counts.counts.iter().map(|&c| c as f64).collect(), alpha: spec.alpha() })
    }
}

impl LogDensity for LgcpLikelihood {
    fn dim(&self) -> usize {
        self.counts.len()
    }

    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut ll = 0.0;
        for ((g, x), y) in grad.iter_mut().zip(x).zip(&self.counts) {
            let rate = self.alpha * x.exp();
            ll += y * x - rate;
            *g = y - rate;
        }
        ll
    }

    fn eval_rows(&self, xs: ArrayView2<f64>, mut logp: ArrayViewMut1<f64>, mut grad: ArrayViewMut2<f64>) {
        let y = self.counts.view().insert_axis(Axis(0));
        Zip::from(&mut grad).and(&xs).and_broadcast(&y).for_each(|g, &x, &y| {
            *g = y * x - self.alpha * x.exp();
        });
        logp.assign(&grad.sum_axis(Axis(1)));
        Zip::from(&mut grad).and(&xs).and_broadcast(&y).for_each(|g, &x, &y| {
            *g = y - self.alpha * x.exp();
        });
    }
}

/// Observed counts per cell, row-major over the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LgcpCounts {
    pub grid: usize,
    pub seed: u64,
    pub counts: Vec<u64>,
}

impl LgcpCounts {
    /// Draws a latent field from the prior and Poisson counts with rate
    /// `α e^{x}` per cell.
    pub fn synthetic(spec: &LgcpSpec, seed: u64) -> Result<Self> {
        let prior = LgcpPrior::new(spec)?;
        let mut r = rng::seeded(seed);
        let latent = prior.sample(1, &mut r);
        let alpha = spec.alpha();
        let counts = latent
            .iter()
            .map(|&x| {
                let rate = alpha * x.exp();
                if rate <= 0.0 {
                    return Ok(0);
                }
                let p = Poisson::new(rate).map_err(|e| Error::Config(format!("poisson rate {rate}: {e}")))?;
                Ok(p.sample(&mut r) as u64)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: spec.grid, seed, counts })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&s)?;
        if c.counts.len() != c.grid * c.grid {
            return Err(Error::Schema(format!("{} counts for a {} grid", c.counts.len(), c.grid)));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> LgcpSpec {
        LgcpSpec { grid: 3, ..Default::default() }
    }

    #[test]
    fn cholesky_reproduces_covariance() {
        let spec = LgcpSpec { grid: 6, ..Default::default() };
        let prior = LgcpPrior::new(&spec).unwrap();
        let l = prior.cholesky();
        let k = to_ndarray(&spec.covariance());
        let diff = &l.dot(&l.t()) - &k;
        let rel = diff.mapv(|v| v * v).sum().sqrt() / k.mapv(|v| v * v).sum().sqrt();
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn empirical_covariance_matches_kernel() {
        let spec = small();
        let prior = LgcpPrior::new(&spec).unwrap();
        let xs = prior.sample(100_000, &mut rng::seeded(8));
        let centered = &xs - &xs.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let cov = centered.t().dot(&centered) / (xs.nrows() as f64 - 1.0);
        let k = to_ndarray(&spec.covariance());
        let rel = (&cov - &k).mapv(|v| v * v).sum().sqrt() / k.mapv(|v| v * v).sum().sqrt();
        assert!(rel < 0.1, "{rel}");
    }

    #[test]
    fn prior_density_at_mean() {
        let spec = small();
        let prior = LgcpPrior::new(&spec).unwrap();
        let x = vec![spec.prior_mean(); 9];
        let (lp, g) = prior.log_density_and_score(&x).unwrap();
        let k = spec.covariance();
        let want = -0.5 * (k.determinant().ln() + 9.0 * LN_2PI);
        assert_relative_eq!(lp, want, max_relative = 1e-10);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn batched_prior_matches_pointwise() {
        let prior = LgcpPrior::new(&small()).unwrap();
        let xs = prior.sample(3, &mut rng::seeded(1));
        let mut lp = Array1::zeros(3);
        let mut g = Array2::zeros((3, 9));
        prior.eval_rows(xs.view(), lp.view_mut(), g.view_mut());
        for i in 0..3 {
            let (a, ga) = prior.log_density_and_score(xs.row(i).as_slice().unwrap()).unwrap();
            assert_relative_eq!(lp[i], a, max_relative = 1e-12);
            for j in 0..9 {
                assert_relative_eq!(g[[i, j]], ga[j], max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_counts_round_trip() {
        let spec = LgcpSpec { grid: 5, ..Default::default() };
        let c = LgcpCounts::synthetic(&spec, 4).unwrap();
        assert_eq!(c.counts.len(), 25);
        assert_eq!(c, LgcpCounts::synthetic(&spec, 4).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("counts.json");
        c.save(&p).unwrap();
        assert_eq!(LgcpCounts::load(&p).unwrap(), c);
        let lik = LgcpLikelihood::new(&spec, &c).unwrap();
        assert_eq!(lik.dim(), 25);
        assert!(LgcpLikelihood::new(&small(), &c).is_err());
    }

    #[test]
    fn bad_spec() {
        assert!(LgcpPrior::new(&LgcpSpec { grid: 0, ..Default::default() }).is_err());
        assert!(LgcpPrior::new(&LgcpSpec { variance: -1.0, ..Default::default() }).is_err());
    }
}
