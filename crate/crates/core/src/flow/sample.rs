use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::field::VelocityField;
use super::transport::{generate_samples, TransportOptions};
use crate::annealing::AnnealedPath;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Samples per repetition.
    pub samples: usize,
    pub reps: usize,
    /// Use importance weights; when false every estimate is unweighted.
    pub weighted: bool,
    /// Subtract the means stored at training time rather than
    /// self-normalized estimates from the sampled ensemble.
    pub use_stored_means: bool,
    pub transport: TransportOptions,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { samples: 2000, reps: 30, weighted: true, use_stored_means: true, transport: TransportOptions::default() }
    }
}

/// Samples at the end of the path and both `log Z` estimates.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub x: Array2<f64>,
    pub weights: Array1<f64>,
    /// `log (1/n Σ exp(λ_i))`.
    pub log_z_hat: f64,
    /// Sum over steps of weighted means of the time-derivative term.
    pub log_z_path: f64,
    pub ess: f64,
    /// `max - min` of `λ_i + δ_i`.
    pub consistency: f64,
}

/// Transports `cfg.samples` fresh start samples through every step.
pub fn sample<F: VelocityField + ?Sized>(
    path: &AnnealedPath,
    field: &F,
    means: Option<&[f64]>,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<SampleOutput> {
    let steps = field.steps();
    if steps == 0 {
        return Err(Error::Config("flow has no steps".into()));
    }
    let means = if cfg.use_stored_means { means } else { None };
    let mut r = rng::seeded(seed);
    let ens = generate_samples(path, field, means, steps, steps, cfg.samples, &mut r, cfg.transport)?;
    let consistency = ens.consistency_spread();
    if cfg.weighted {
        Ok(SampleOutput {
            weights: ens.weights(),
            log_z_hat: ens.log_z_hat(),
            log_z_path: ens.path_weighted,
            ess: ens.ess(),
            consistency,
            x: ens.x,
        })
    } else {
        Ok(SampleOutput {
            weights: ens.uniform_weights(),
            log_z_hat: ens.path_uniform,
            log_z_path: ens.path_uniform,
            ess: 1.0,
            consistency,
            x: ens.x,
        })
    }
}
