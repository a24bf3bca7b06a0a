use ndarray::{Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

use super::{standard_normals, LogDensity, Sampler, SharedDensity};
use crate::error::{Error, Result};
use crate::math::LN_2PI;
use crate::rng::Rng64;

/// `N(mean, std² I)`. When `normalized` is false the `-D/2 log(2π std²)`
/// constant is dropped, leaving `exp(-|x - mean|² / (2 std²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    mean: Vec<f64>,
    std: f64,
    normalized: bool,
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, std: f64, normalized: bool) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Config("gaussian dimension must be positive".into()));
        }
        if !(std > 0.0 && std.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("invalid gaussian scale {std}")));
        }
        Ok(Self { mean, std, normalized })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: 1.0, normalized: true }
    }

    pub fn unnormalized(dim: usize, std: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], std, false)
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    fn log_const(&self) -> f64 {
        let d = self.mean.len() as f64;
        0.5 * d * (LN_2PI + 2.0 * self.std.ln())
    }
}

impl LogDensity for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let inv_var = 1.0 / (self.std * self.std);
        let mut sq = 0.0;
        for ((g, xi), m) in grad.iter_mut().zip(x).zip(&self.mean) {
            let r = xi - m;
            sq += r * r;
            *g = -r * inv_var;
        }
        let lp = -0.5 * sq * inv_var;
        if self.normalized {
            lp - self.log_const()
        } else {
            lp
        }
    }

    fn eval_rows(&self, xs: ArrayView2<f64>, mut logp: ArrayViewMut1<f64>, mut grad: ArrayViewMut2<f64>) {
        let inv_var = 1.0 / (self.std * self.std);
        let c = if self.normalized { self.log_const() } else { 0.0 };
        let mean = ndarray::ArrayView1::from(&self.mean[..]);
        Zip::from(grad.rows_mut()).and(xs.rows()).and(&mut logp).for_each(|mut g, x, lp| {
            let mut sq = 0.0;
            Zip::from(&mut g).and(&x).and(&mean).for_each(|g, x, m| {
                let r = x - m;
                sq += r * r;
                *g = -r * inv_var;
            });
            *lp = -0.5 * sq * inv_var - c;
        });
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(if self.normalized { 0.0 } else { self.log_const() })
    }
}

impl Sampler for IsotropicGaussian {
    fn sample(&self, n: usize, rng: &mut Rng64) -> Array2<f64> {
        let mut z = standard_normals(n, self.mean.len(), rng);
        z *= self.std;
        z += &ndarray::ArrayView1::from(&self.mean[..]).insert_axis(Axis(0));
        z
    }
}

/// `c · ρ̃` for a positive constant `c`, stored as `log c`.
pub struct Scaled {
    inner: SharedDensity,
    log_c: f64,
}

impl Scaled {
    pub fn new(inner: SharedDensity, log_c: f64) -> Result<Self> {
        if !log_c.is_finite() {
            return Err(Error::Config(format!("scale log {log_c} is not finite")));
        }
        Ok(Self { inner, log_c })
    }
}

impl LogDensity for Scaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.inner.eval_into(x, grad) + self.log_c
    }

    fn eval_rows(&self, xs: ArrayView2<f64>, mut logp: ArrayViewMut1<f64>, grad: ArrayViewMut2<f64>) {
        self.inner.eval_rows(xs, logp.view_mut(), grad);
        logp += self.log_c;
    }

    fn log_normalizer(&self) -> Option<f64> {
        self.inner.log_normalizer().map(|z| z + self.log_c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn standard_normal_at_origin() {
        let g = IsotropicGaussian::standard(3);
        let (lp, s) = g.log_density_and_score(&[0.0; 3]).unwrap();
        assert_relative_eq!(lp, -1.5 * LN_2PI, max_relative = 1e-15);
        assert_eq!(s, vec![0.0; 3]);
    }

    #[test]
    fn unnormalized_normalizer() {
        let g = IsotropicGaussian::unnormalized(2, 2.0).unwrap();
        assert_relative_eq!(g.log_normalizer().unwrap(), 2.0 * (2.0 * (2.0 * std::f64::consts::PI).sqrt()).ln());
        assert_eq!(g.log_density(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let g = IsotropicGaussian::standard(2);
        let xs = g.sample(100_000, &mut rng::seeded(1));
        for m in xs.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 0.02, "{m}");
        }
        let again = g.sample(100_000, &mut rng::seeded(1));
        assert_eq!(xs, again);
    }

    #[test]
    fn scaled_shifts_by_log_c() {
        let base: SharedDensity = Arc::new(IsotropicGaussian::standard(2));
        let s = Scaled::new(base.clone(), 3.0f64.ln()).unwrap();
        let x = [0.4, -0.3];
        assert_relative_eq!(s.log_density(&x).unwrap(), base.log_density(&x).unwrap() + 3.0f64.ln());
        assert_relative_eq!(s.log_normalizer().unwrap(), 3.0f64.ln());
        assert!(Scaled::new(base, f64::INFINITY).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = IsotropicGaussian::standard(2);
        assert!(matches!(g.log_density(&[f64::INFINITY, 0.0]), Err(Error::NonFiniteInput)));
        assert!(matches!(g.log_density(&[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(IsotropicGaussian::new(vec![0.0], 0.0, true).is_err());
    }
}
