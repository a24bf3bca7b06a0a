//! Sequential Monte Carlo with fixed-step HMC mutations.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annealing::AnnealedPath;
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::metrics;
use crate::rng::{self, Rng64};
use crate::targets::standard_normals;

/// Indices of a systematic resample of `n` draws from normalized `weights`.
pub fn systematic_resample(weights: &[f64], n: usize, rng: &mut Rng64) -> Result<Vec<usize>> {
    if weights.is_empty() || n == 0 {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Unnormalized(total));
    }
    let u0: f64 = rng.random::<f64>() / n as f64;
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for j in 0..n {
        let u = u0 + j as f64 * step;
        while u >= cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog: usize,
    /// Kernel applications per temperature.
    pub repeats: usize,
}

impl HmcConfig {
    /// Mixture and funnel settings; also used for logistic regression.
    pub const STANDARD: Self = Self { step_size: 0.02, leapfrog: 20, repeats: 10 };
    pub const LGCP: Self = Self { step_size: 0.2, leapfrog: 20, repeats: 2 };

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || self.leapfrog == 0 || self.repeats == 0 {
            return Err(Error::Config("HMC needs step size > 0, L >= 1 and N_H >= 1".into()));
        }
        Ok(())
    }
}

/// `L` leapfrog steps at fixed `τ` for every row. Returns the end positions,
/// momenta and log-densities.
pub fn leapfrog(
    path: &AnnealedPath,
    tau: f64,
    x: ArrayView2<f64>,
    p: ArrayView2<f64>,
    step: f64,
    steps: usize,
) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
    let mut x = x.to_owned();
    let mut p = p.to_owned();
    let (mut lp, mut g) = path.log_rho_and_score(x.view(), tau)?;
    for _ in 0..steps {
        p.scaled_add(0.5 * step, &g);
        x.scaled_add(step, &p);
        (lp, g) = path.log_rho_and_score(x.view(), tau)?;
        p.scaled_add(0.5 * step, &g);
    }
    Ok((x, p, lp))
}

/// `cfg.repeats` Metropolis-corrected HMC moves with identity mass. A
/// non-finite end energy counts as a rejection. Returns the acceptance rate.
pub fn hmc(path: &AnnealedPath, tau: f64, x: &mut Array2<f64>, cfg: &HmcConfig, rng: &mut Rng64) -> Result<f64> {
    cfg.validate()?;
    let (n, d) = x.dim();
    let mut accepted = 0usize;
    let (mut lp, _) = path.log_rho_and_score(x.view(), tau)?;
    for _ in 0..cfg.repeats {
        let p0 = standard_normals(n, d, rng);
        let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (x1, p1, lp1) = leapfrog(path, tau, x.view(), p0.view(), cfg.step_size, cfg.leapfrog)?;
        let k0 = p0.mapv(|v| v * v).sum_axis(Axis(1)) * 0.5;
        let k1 = p1.mapv(|v| v * v).sum_axis(Axis(1)) * 0.5;
        for i in 0..n {
            let h0 = -lp[i] + k0[i];
            let h1 = -lp1[i] + k1[i];
            let log_a = h0 - h1;
            if log_a.is_finite() && x1.row(i).iter().all(|v| v.is_finite()) && u[i].ln() < log_a {
                x.row_mut(i).assign(&x1.row(i));
                lp[i] = lp1[i];
                accepted += 1;
            }
        }
    }
    Ok(accepted as f64 / (n * cfg.repeats) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub steps: usize,
    pub particles: usize,
    /// Resample when ESS / n falls below this.
    pub ess_threshold: f64,
    pub hmc: HmcConfig,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self { steps: 256, particles: 2000, ess_threshold: 0.98, hmc: HmcConfig::STANDARD }
    }
}

#[derive(Debug, Clone)]
pub struct SmcOutput {
    pub x: Array2<f64>,
    pub weights: Array1<f64>,
    pub log_z: f64,
    pub ess: f64,
    pub resamples: usize,
    pub acceptance: f64,
}

pub fn run_smc(path: &AnnealedPath, cfg: &SmcConfig, seed: u64) -> Result<SmcOutput> {
    cfg.hmc.validate()?;
    if cfg.steps == 0 || cfg.particles == 0 {
        return Err(Error::Config("SMC needs T >= 1 and n >= 1".into()));
    }
    let n = cfg.particles;
    let schedule = path.schedule();
    let mut r = rng::seeded(seed);
    let mut x = path.sample_start(n, &mut r);
    let mut log_w = Array1::<f64>::zeros(n);
    let mut log_z = 0.0;
    let mut resamples = 0;
    let mut acc_sum = 0.0;
    let mut ess = 1.0;

    for k in 0..cfg.steps {
        let batch = path.eval_batch_lenient(x.view())?;
        let inc = &batch.log_ratio * schedule.increment(k, cfg.steps);
        let norm = log_sum_exp(log_w.as_slice().expect("contiguous"));
        let mut next = log_w.clone();
        Zip::from(&mut next).and(&inc).for_each(|w, i| {
            *w = if i.is_nan() { f64::NEG_INFINITY } else { *w + i };
        });
        let next_norm = log_sum_exp(next.as_slice().expect("contiguous"));
        if !next_norm.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        log_z += next_norm - norm;
        log_w = next - next_norm;

        let w = log_w.mapv(f64::exp);
        ess = metrics::ess(w.as_slice().expect("contiguous"))?;
        if ess < cfg.ess_threshold {
            let idx = systematic_resample(w.as_slice().expect("contiguous"), n, &mut r)?;
            x = x.select(Axis(0), &idx);
            log_w.fill(-(n as f64).ln());
            resamples += 1;
            ess = 1.0;
        }
        let tau = schedule.at_step(k + 1, cfg.steps).0;
        acc_sum += hmc(path, tau, &mut x, &cfg.hmc, &mut r)?;
    }
    let weights = {
        let lse = log_sum_exp(log_w.as_slice().expect("contiguous"));
        log_w.mapv(|l| (l - lse).exp())
    };
    Ok(SmcOutput { x, weights, log_z, ess, resamples, acceptance: acc_sum / cfg.steps as f64 })
}
