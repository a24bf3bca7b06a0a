//! Benchmark densities.
//!
//! Every density documents which additive constants its log-density keeps,
//! since log-normalizer estimates shift by exactly those constants.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::rng::Rng64;

pub mod funnel;
pub mod gaussian;
pub mod lgcp;
pub mod logistic;
pub mod mixture;

pub use funnel::Funnel;
pub use gaussian::{IsotropicGaussian, Scaled};
pub use lgcp::{LgcpCounts, LgcpLikelihood, LgcpPrior, LgcpSpec};
pub use logistic::{Dataset, LogisticData, LogisticLikelihood};
pub use mixture::{GaussianMixture, MixtureConvention};

/// An unnormalized log-density with an analytic score.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// `log ρ̃(x)`, writing `∇ log ρ̃(x)` into `grad`. `x` has length
    /// [`dim`](Self::dim) and is finite; callers check both.
    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Row-wise [`eval_into`](Self::eval_into). Override when a batched
    /// formulation is cheaper.
    fn eval_rows(
        &self,
        xs: ArrayView2<f64>,
        mut logp: ArrayViewMut1<f64>,
        mut grad: ArrayViewMut2<f64>,
    ) {
        let mut xbuf = vec![0.0; self.dim()];
        let mut gbuf = vec![0.0; self.dim()];
        for (i, row) in xs.rows().into_iter().enumerate() {
            let x = match row.as_slice() {
                Some(s) => s,
                None => {
                    for (b, v) in xbuf.iter_mut().zip(row.iter()) {
                        *b = *v;
                    }
                    &xbuf
                }
            };
            logp[i] = self.eval_into(x, &mut gbuf);
            grad.row_mut(i).assign(&ndarray::ArrayView1::from(&gbuf[..]));
        }
    }

    /// `log ∫ ρ̃` when known in closed form.
    fn log_normalizer(&self) -> Option<f64> {
        None
    }

    fn log_density_and_score(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(self.dim(), x)?;
        let mut g = vec![0.0; self.dim()];
        let lp = self.eval_into(x, &mut g);
        Ok((lp, g))
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density_and_score(x)?.0)
    }
}

/// A density that can be sampled exactly.
pub trait Sampler: Send + Sync {
    fn sample(&self, n: usize, rng: &mut Rng64) -> Array2<f64>;
}

pub type SharedDensity = Arc<dyn LogDensity>;

pub(crate) fn check_point(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Fills an `n × d` array with independent standard normals.
pub fn standard_normals(n: usize, d: usize, rng: &mut Rng64) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng))
}
