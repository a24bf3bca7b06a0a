use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LogDensity, Sampler};
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, LN_2PI};
use crate::rng::Rng64;

/// Which normalizing constant each mixture component carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureConvention {
    /// Each mode is a normalized `D`-dimensional Gaussian, so `log Z = 0`.
    #[default]
    Normalized,
    /// Each mode carries only the one-dimensional factor `(2πσ²)^{-1/2}`, so
    /// `log Z = (D - 1)/2 · log(2πσ²)`.
    PerModeUnivariate,
}

/// Weighted mixture of isotropic Gaussians sharing one variance.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    centers: Array2<f64>,
    variance: f64,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    convention: MixtureConvention,
}

pub const GRID_VARIANCE: f64 = 0.012;

impl GaussianMixture {
    pub fn new(
        centers: Array2<f64>,
        variance: f64,
        weights: Vec<f64>,
        convention: MixtureConvention,
    ) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(Error::Config("mixture needs at least one center".into()));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Config(format!("mixture variance {variance} must be positive")));
        }
        if weights.len() != centers.nrows() {
            return Err(Error::Config(format!(
                "{} weights for {} centers",
                weights.len(),
                centers.nrows()
            )));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("mixture weights must be nonnegative and sum to 1".into()));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("mixture centers must be finite".into()));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { centers, variance, log_weights, weights, convention })
    }

    /// Nine modes on `{-1, 0, 1}²`.
    pub fn grid(variance: f64, weights: Option<Vec<f64>>, convention: MixtureConvention) -> Result<Self> {
        let mut centers = Array2::zeros((9, 2));
        for (k, mut row) in centers.rows_mut().into_iter().enumerate() {
            row[0] = (k / 3) as f64 - 1.0;
            row[1] = (k % 3) as f64 - 1.0;
        }
        let weights = weights.unwrap_or_else(|| vec![1.0 / 9.0; 9]);
        Self::new(centers, variance, weights, convention)
    }

    pub fn centers(&self) -> &Array2<f64> {
        &self.centers
    }

    fn log_mode_const(&self) -> f64 {
        let d = match self.convention {
            MixtureConvention::Normalized => self.centers.ncols() as f64,
            MixtureConvention::PerModeUnivariate => 1.0,
        };
        -0.5 * d * (LN_2PI + self.variance.ln())
    }
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.centers.ncols()
    }

    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let inv_var = 1.0 / self.variance;
        let terms: Vec<f64> = self
            .centers
            .rows()
            .into_iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| {
                let sq: f64 = c.iter().zip(x).map(|(c, x)| (x - c) * (x - c)).sum();
                lw - 0.5 * sq * inv_var
            })
            .collect();
        let lse = log_sum_exp(&terms);
        grad.fill(0.0);
        for (c, t) in self.centers.rows().into_iter().zip(&terms) {
            let r = (t - lse).exp();
            if r == 0.0 {
                continue;
            }
            for ((g, c), x) in grad.iter_mut().zip(c.iter()).zip(x) {
                *g -= r * (x - c) * inv_var;
            }
        }
        lse + self.log_mode_const()
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(match self.convention {
            MixtureConvention::Normalized => 0.0,
            MixtureConvention::PerModeUnivariate => {
                0.5 * (self.centers.ncols() as f64 - 1.0) * (LN_2PI + self.variance.ln())
            }
        })
    }
}

impl Sampler for GaussianMixture {
    fn sample(&self, n: usize, rng: &mut Rng64) -> Array2<f64> {
        let pick = WeightedIndex::new(&self.weights).expect("weights validated at construction");
        let sd = self.variance.sqrt();
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            let k = pick.sample(rng);
            for j in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                row[j] = self.centers[[k, j]] + sd * z;
            }
        }
        out
    }
}
