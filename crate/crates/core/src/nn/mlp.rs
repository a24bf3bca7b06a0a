//! Two-hidden-layer velocity network `v(x) = W3 σ(W2 σ(W1 x + b1) + b2) + b3`.
//!
//! The divergence of this architecture has a closed contraction. With
//! `s1 = σ'(a1)`, `s2 = σ'(a2)` and `P = W1 W3`,
//!
//! ```text
//! ∇·v = tr(W3 diag(s2) W2 diag(s1) W1) = Σ_j Σ_i s2_j · W2_ji · P_ij · s1_i
//! ```
//!
//! so with `C = W2 ⊙ Pᵀ` the exact trace costs one `h2 × h1` bilinear form per
//! point, independent of the input dimension. [`NetParams::divergence_sweeps`]
//! computes the same quantity with one forward-mode tangent per coordinate and
//! is kept as an independent route.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Silu,
}

impl Activation {
    /// Returns `(σ(a), σ'(a), σ''(a))`.
    #[inline]
    pub fn eval(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let h = a.tanh();
                let d1 = 1.0 - h * h;
                (h, d1, -2.0 * h * d1)
            }
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-a).exp());
                let h = a * sig;
                let ds = sig * (1.0 - sig);
                (h, sig + a * ds, ds * (2.0 + a * (1.0 - 2.0 * sig)))
            }
        }
    }
}

/// Parameters of one per-step velocity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub dim: usize,
    pub widths: [usize; 2],
    pub activation: Activation,
    /// `widths[0] × dim`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `widths[1] × widths[0]`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// `dim × widths[1]`
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Default hidden widths.
pub const HIDDEN: [usize; 2] = [64, 64];

/// Mean loss, its gradient and the per-point residuals of a batch.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad: NetParams,
    pub residuals: Array1<f64>,
}

struct Activations {
    h1: Array2<f64>,
    s1: Array2<f64>,
    q1: Array2<f64>,
    h2: Array2<f64>,
    s2: Array2<f64>,
    q2: Array2<f64>,
    v: Array2<f64>,
    /// `S1 Cᵀ`, row `n` holds `∂ div / ∂ s2`.
    y: Array2<f64>,
    div: Array1<f64>,
}

struct PartialGrad {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    w3: Array2<f64>,
    b3: Array1<f64>,
    /// `Σ_n g_n s2_n s1_nᵀ`, the adjoint of `C`.
    e: Array2<f64>,
    sq_sum: f64,
    residuals: Array1<f64>,
}

impl NetParams {
    pub fn zeros(dim: usize, widths: [usize; 2], activation: Activation) -> Self {
        let [h1, h2] = widths;
        Self {
            dim,
            widths,
            activation,
            w1: Array2::zeros((h1, dim)),
            b1: Array1::zeros(h1),
            w2: Array2::zeros((h2, h1)),
            b2: Array1::zeros(h2),
            w3: Array2::zeros((dim, h2)),
            b3: Array1::zeros(dim),
        }
    }

    /// Hidden layers uniform in `±1/√fan_in`, output layer zero.
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        widths: [usize; 2],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(dim, widths, activation);
        let b = 1.0 / (dim as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-b..b));
        p.b1.mapv_inplace(|_| rng.random_range(-b..b));
        let b = 1.0 / (widths[0] as f64).sqrt();
        p.w2.mapv_inplace(|_| rng.random_range(-b..b));
        p.b2.mapv_inplace(|_| rng.random_range(-b..b));
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim, self.widths, self.activation)
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w3.as_slice().expect("standard layout"),
            self.b3.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w3.as_slice_mut().expect("standard layout"),
            self.b3.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Checks that every tensor agrees with `dim` and `widths`.
    pub fn validate(&self) -> Result<()> {
        let [h1, h2] = self.widths;
        let d = self.dim;
        let checks = [
            (self.w1.dim(), (h1, d)),
            (self.w2.dim(), (h2, h1)),
            (self.w3.dim(), (d, h2)),
        ];
        for (got, want) in checks {
            if got != want {
                return Err(Error::Schema(format!(
                    "weight shape {got:?}, expected {want:?}"
                )));
            }
        }
        for (got, want) in [(self.b1.len(), h1), (self.b2.len(), h2), (self.b3.len(), d)] {
            if got != want {
                return Err(Error::Schema(format!("bias length {got}, expected {want}")));
            }
        }
        if !self.w1.is_standard_layout() || !self.w2.is_standard_layout() || !self.w3.is_standard_layout() {
            return Err(Error::Schema("non-contiguous weight tensor".into()));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    fn check_batch(&self, xs: &ArrayView2<f64>) -> Result<()> {
        if xs.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: xs.ncols() });
        }
        Ok(())
    }

    /// `C = W2 ⊙ (W1 W3)ᵀ`, shape `h2 × h1`.
    fn contraction(&self) -> (Array2<f64>, Array2<f64>) {
        let p = self.w1.dot(&self.w3);
        let c = &self.w2 * &p.t();
        (p, c)
    }

    /// `v(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let xs = ArrayView2::from_shape((1, self.dim), x).expect("row view");
        let (v, _) = self.eval_batch(xs)?;
        Ok(v.row(0).to_vec())
    }

    /// Exact `∇·v(x)`.
    pub fn divergence(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let xs = ArrayView2::from_shape((1, self.dim), x).expect("row view");
        let (_, div) = self.eval_batch(xs)?;
        Ok(div[0])
    }

    /// Exact `∇·v(x)` by `D` forward-mode tangent sweeps, one per coordinate.
    pub fn divergence_sweeps(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let xv = ArrayView1::from(x);
        let a1 = self.w1.dot(&xv) + &self.b1;
        let s1 = a1.mapv(|a| self.activation.eval(a).1);
        let h1 = a1.mapv(|a| self.activation.eval(a).0);
        let a2 = self.w2.dot(&h1) + &self.b2;
        let s2 = a2.mapv(|a| self.activation.eval(a).1);
        let mut div = 0.0;
        for d in 0..self.dim {
            let h1_dot = &s1 * &self.w1.column(d);
            let h2_dot = &s2 * &self.w2.dot(&h1_dot);
            div += self.w3.row(d).dot(&h2_dot);
        }
        Ok(div)
    }

    /// `ε = ∇·v + score·v + source`.
    pub fn residual(&self, x: &[f64], score: &[f64], source: f64) -> Result<f64> {
        self.check_point(x)?;
        if score.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: score.len() });
        }
        let xs = ArrayView2::from_shape((1, self.dim), x).expect("row view");
        let (v, div) = self.eval_batch(xs)?;
        let sv: f64 = v.row(0).iter().zip(score).map(|(a, b)| a * b).sum();
        Ok(div[0] + sv + source)
    }

    fn activations(&self, xs: ArrayView2<f64>, c: &Array2<f64>) -> Activations {
        let act = self.activation;
        let layer = |a: Array2<f64>| {
            let mut h = a;
            let mut s = Array2::zeros(h.raw_dim());
            let mut q = Array2::zeros(h.raw_dim());
            Zip::from(&mut h).and(&mut s).and(&mut q).for_each(|h, s, q| {
                let (hv, sv, qv) = act.eval(*h);
                *h = hv;
                *s = sv;
                *q = qv;
            });
            (h, s, q)
        };
        let (h1, s1, q1) = layer(xs.dot(&self.w1.t()) + &self.b1);
        let (h2, s2, q2) = layer(h1.dot(&self.w2.t()) + &self.b2);
        let v = h2.dot(&self.w3.t()) + &self.b3;
        let y = s1.dot(&c.t());
        let div = (&y * &s2).sum_axis(Axis(1));
        Activations { h1, s1, q1, h2, s2, q2, v, y, div }
    }

    /// Velocities (`n × D`) and divergences (`n`) for a batch of points.
    pub fn eval_batch(&self, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(&xs)?;
        let n = xs.nrows();
        let (_, c) = self.contraction();
        let parts = par::map_chunks(n, par::CHUNK, |r| {
            let a = self.activations(xs.slice(s![r, ..]), &c);
            (a.v, a.div)
        });
        let mut v = Array2::zeros((n, self.dim));
        let mut div = Array1::zeros(n);
        let mut row = 0;
        for (pv, pd) in parts {
            let m = pv.nrows();
            v.slice_mut(s![row..row + m, ..]).assign(&pv);
            div.slice_mut(s![row..row + m]).assign(&pd);
            row += m;
        }
        Ok((v, div))
    }

    /// Mean squared residual `(1/n) Σ ε_i²` with
    /// `ε_i = ∇·v(x_i) + score_i·v(x_i) + source_i`, and its exact gradient.
    pub fn loss_and_grad(
        &self,
        xs: ArrayView2<f64>,
        scores: ArrayView2<f64>,
        sources: ArrayView1<f64>,
    ) -> Result<LossEval> {
        self.check_batch(&xs)?;
        let n = xs.nrows();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if scores.dim() != xs.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim, got: scores.ncols() });
        }
        if sources.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: sources.len() });
        }
        let (p, c) = self.contraction();
        let scale = 2.0 / n as f64;
        let parts = par::map_chunks(n, par::CHUNK, |r| {
            self.chunk_grad(
                xs.slice(s![r.clone(), ..]),
                scores.slice(s![r.clone(), ..]),
                sources.slice(s![r]),
                &c,
                scale,
            )
        });

        let mut grad = self.zeros_like();
        let [h1, h2] = self.widths;
        let mut e = Array2::zeros((h2, h1));
        let mut sq_sum = 0.0;
        let mut residuals = Array1::zeros(n);
        let mut row = 0;
        for part in parts {
            grad.w1 += &part.w1;
            grad.b1 += &part.b1;
            grad.w2 += &part.w2;
            grad.b2 += &part.b2;
            grad.w3 += &part.w3;
            grad.b3 += &part.b3;
            e += &part.e;
            sq_sum += part.sq_sum;
            let m = part.residuals.len();
            residuals.slice_mut(s![row..row + m]).assign(&part.residuals);
            row += m;
        }
        // C = W2 ⊙ Pᵀ and P = W1 W3.
        grad.w2 += &(&e * &p.t());
        let dp = (&e * &self.w2).reversed_axes();
        general_mat_mul(1.0, &dp, &self.w3.t(), 1.0, &mut grad.w1);
        general_mat_mul(1.0, &self.w1.t(), &dp, 1.0, &mut grad.w3);

        Ok(LossEval { loss: sq_sum / n as f64, grad, residuals })
    }

    fn chunk_grad(
        &self,
        xs: ArrayView2<f64>,
        scores: ArrayView2<f64>,
        sources: ArrayView1<f64>,
        c: &Array2<f64>,
        scale: f64,
    ) -> PartialGrad {
        let a = self.activations(xs, c);
        let residuals = &a.div + &(&a.v * &scores).sum_axis(Axis(1)) + &sources;
        let sq_sum = residuals.iter().map(|e| e * e).sum();
        let g = (&residuals * scale).insert_axis(Axis(1));

        // score·v
        let dv = &scores * &g;
        let w3 = dv.t().dot(&a.h2);
        let b3 = dv.sum_axis(Axis(0));
        let mut dh2 = dv.dot(&self.w3);

        // ∇·v through s2 and s1
        let ds2 = &a.y * &g;
        let gs2 = &a.s2 * &g;
        let ds1 = gs2.dot(c);
        let e = gs2.t().dot(&a.s1);

        Zip::from(&mut dh2).and(&a.s2).and(&ds2).and(&a.q2).for_each(|d, s, ds, q| {
            *d = *d * s + ds * q;
        });
        let da2 = dh2;
        let w2 = da2.t().dot(&a.h1);
        let b2 = da2.sum_axis(Axis(0));
        let mut da1 = da2.dot(&self.w2);
        Zip::from(&mut da1).and(&a.s1).and(&ds1).and(&a.q1).for_each(|d, s, ds, q| {
            *d = *d * s + ds * q;
        });
        let w1 = da1.t().dot(&xs);
        let b1 = da1.sum_axis(Axis(0));

        PartialGrad { w1, b1, w2, b2, w3, b3, e, sq_sum, residuals }
    }
}
