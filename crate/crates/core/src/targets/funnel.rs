use ndarray::Array2;
use rand::distr::Distribution;
use rand_distr::StandardNormal;

use super::{LogDensity, Sampler};
use crate::error::{Error, Result};
use crate::math::LN_2PI;
use crate::rng::Rng64;

/// `x0 ~ N(0, σ0²)`, `x_i | x0 ~ N(0, e^{x0})` for `i = 1..D`. Normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Funnel {
    dim: usize,
    x0_var: f64,
}

impl Funnel {
    pub fn new(dim: usize, x0_var: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("funnel needs D >= 2, got {dim}")));
        }
        if !(x0_var > 0.0 && x0_var.is_finite()) {
            return Err(Error::Config(format!("funnel x0 variance {x0_var} must be positive")));
        }
        Ok(Self { dim, x0_var })
    }

    pub fn standard() -> Self {
        Self { dim: 10, x0_var: 9.0 }
    }

    pub fn x0_var(&self) -> f64 {
        self.x0_var
    }
}

impl LogDensity for Funnel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let x0 = x[0];
        let k = (self.dim - 1) as f64;
        let prec = (-x0).exp();
        let mut sq = 0.0;
        for (g, xi) in grad[1..].iter_mut().zip(&x[1..]) {
            sq += xi * xi;
            *g = -xi * prec;
        }
        grad[0] = -x0 / self.x0_var + 0.5 * sq * prec - 0.5 * k;
        -0.5 * x0 * x0 / self.x0_var - 0.5 * (LN_2PI + self.x0_var.ln())
            - 0.5 * sq * prec
            - 0.5 * k * (LN_2PI + x0)
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(0.0)
    }
}

impl Sampler for Funnel {
    fn sample(&self, n: usize, rng: &mut Rng64) -> Array2<f64> {
        let sd0 = self.x0_var.sqrt();
        let mut out = Array2::zeros((n, self.dim));
        for mut row in out.rows_mut() {
            let z: f64 = StandardNormal.sample(rng);
            let x0 = sd0 * z;
            row[0] = x0;
            let sd = (0.5 * x0).exp();
            for v in row.iter_mut().skip(1) {
                let z: f64 = StandardNormal.sample(rng);
                *v = sd * z;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::variance;
    use crate::rng;
    use approx::assert_relative_eq;

    #[test]
    fn origin_value() {
        let f = Funnel::standard();
        let (lp, g) = f.log_density_and_score(&[0.0; 10]).unwrap();
        assert_relative_eq!(lp, -0.5 * (LN_2PI + 9f64.ln()) - 4.5 * LN_2PI, max_relative = 1e-14);
        assert_relative_eq!(g[0], -4.5);
        assert!(g[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn x0_variance_of_exact_samples() {
        let f = Funnel::standard();
        let xs = f.sample(100_000, &mut rng::seeded(23));
        let v = variance(&xs.column(0).to_vec());
        assert!((v - 9.0).abs() < 0.45, "{v}");
    }

    #[test]
    fn needs_two_dims() {
        assert!(Funnel::new(1, 9.0).is_err());
    }
}
