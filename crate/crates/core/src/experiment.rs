//! Run configuration and the on-disk layout of trained flows.
//!
//! A flow directory holds `manifest.json` plus one `step_NNNN.json` per step.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::annealing::{AnnealedPath, PathKind, Schedule};
use crate::error::{Error, Result};
use crate::flow::{sample, FlowModel, SampleConfig, SampleOutput, StepMeta, TrainConfig};
use crate::metrics::{sliced_w2, RunReport};
use crate::nn::{Activation, StepCheckpoint};
use crate::rng;
use crate::smc::{run_smc, HmcConfig, SmcConfig, SmcOutput};
use crate::targets::{
    Dataset, Funnel, GaussianMixture, IsotropicGaussian, LgcpCounts, LgcpLikelihood, LgcpPrior, LgcpSpec, LogisticData,
    LogisticLikelihood, MixtureConvention, Sampler, SharedDensity,
};

fn default_variance() -> f64 {
    crate::targets::mixture::GRID_VARIANCE
}

fn default_funnel_dim() -> usize {
    10
}

fn default_x0_var() -> f64 {
    9.0
}

fn default_std() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLogistic {
    pub rows: usize,
    pub features: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TargetSpec {
    /// `exp(-|x|² / (2 std²))`, with known normalizer.
    Gaussian {
        dim: usize,
        #[serde(default = "default_std")]
        std: f64,
    },
    /// Nine-mode grid mixture.
    Mixture {
        #[serde(default = "default_variance")]
        variance: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        convention: MixtureConvention,
    },
    Funnel {
        #[serde(default = "default_funnel_dim")]
        dim: usize,
        #[serde(default = "default_x0_var")]
        x0_var: f64,
    },
    /// Logistic regression from a CSV file or synthetic data.
    Logistic {
        #[serde(default)]
        dataset: Option<Dataset>,
        #[serde(default)]
        data: Option<PathBuf>,
        #[serde(default)]
        synthetic: Option<SyntheticLogistic>,
    },
    /// Cox process with counts from a file or generated from `counts_seed`.
    Lgcp {
        #[serde(default)]
        spec: LgcpSpec,
        #[serde(default)]
        counts: Option<PathBuf>,
        #[serde(default)]
        counts_seed: Option<u64>,
    },
}

impl TargetSpec {
    pub fn tag(&self) -> String {
        match self {
            TargetSpec::Gaussian { dim, .. } => format!("gaussian{dim}d"),
            TargetSpec::Mixture { .. } => "mixture".into(),
            TargetSpec::Funnel { dim, .. } => format!("funnel{dim}d"),
            TargetSpec::Logistic { dataset: Some(d), .. } => format!("{d:?}").to_lowercase(),
            TargetSpec::Logistic { .. } => "logistic".into(),
            TargetSpec::Lgcp { spec, .. } => format!("lgcp{}", spec.grid),
        }
    }

    pub fn natural_path(&self) -> PathKind {
        match self {
            TargetSpec::Logistic { .. } | TargetSpec::Lgcp { .. } => PathKind::Tempered,
            _ => PathKind::Geometric,
        }
    }

    /// HMC settings used by the SMC baseline when the config gives none.
    pub fn default_hmc(&self) -> HmcConfig {
        match self {
            TargetSpec::Lgcp { .. } => HmcConfig::LGCP,
            _ => HmcConfig::STANDARD,
        }
    }

    /// Exact draws from the target, for targets that admit them.
    pub fn exact_samples(&self, n: usize, seed: u64) -> Result<Option<Array2<f64>>> {
        let sampler: Box<dyn Sampler> = match self {
            TargetSpec::Gaussian { dim, std } => Box::new(IsotropicGaussian::unnormalized(*dim, *std)?),
            TargetSpec::Mixture { variance, weights, convention } => {
                Box::new(GaussianMixture::grid(*variance, weights.clone(), *convention)?)
            }
            TargetSpec::Funnel { dim, x0_var } => Box::new(Funnel::new(*dim, *x0_var)?),
            _ => return Ok(None),
        };
        Ok(Some(sampler.sample(n, &mut rng::seeded(seed))))
    }

    /// Builds the annealed path for this target.
    pub fn build(&self, kind: Option<PathKind>, schedule: Schedule) -> Result<AnnealedPath> {
        let kind = kind.unwrap_or(self.natural_path());
        if kind != self.natural_path() {
            return Err(Error::Config(format!("target `{}` does not support the {kind:?} path", self.tag())));
        }
        match self {
            TargetSpec::Gaussian { dim, std } => {
                let target: SharedDensity = Arc::new(IsotropicGaussian::unnormalized(*dim, *std)?);
                AnnealedPath::geometric(Arc::new(IsotropicGaussian::standard(*dim)), target, schedule)
            }
            TargetSpec::Mixture { variance, weights, convention } => {
                let target: SharedDensity = Arc::new(GaussianMixture::grid(*variance, weights.clone(), *convention)?);
                AnnealedPath::geometric(Arc::new(IsotropicGaussian::standard(2)), target, schedule)
            }
            TargetSpec::Funnel { dim, x0_var } => {
                let target: SharedDensity = Arc::new(Funnel::new(*dim, *x0_var)?);
                AnnealedPath::geometric(Arc::new(IsotropicGaussian::standard(*dim)), target, schedule)
            }
            TargetSpec::Logistic { dataset, data, synthetic } => {
                let d = match (data, synthetic) {
                    (Some(p), None) => LogisticData::load_csv(p, *dataset)?,
                    (None, Some(s)) => LogisticData::synthetic(s.rows, s.features, s.seed)?,
                    _ => {
                        return Err(Error::Config(
                            "logistic target needs exactly one of `data` or `synthetic`".into(),
                        ))
                    }
                };
                let dim = d.dim();
                let lik: SharedDensity = Arc::new(LogisticLikelihood::new(d));
                AnnealedPath::tempered(Arc::new(IsotropicGaussian::standard(dim)), lik, schedule)
            }
            TargetSpec::Lgcp { spec, counts, counts_seed } => {
                let c = match (counts, counts_seed) {
                    (Some(p), None) => LgcpCounts::load(p)?,
                    (None, Some(seed)) => LgcpCounts::synthetic(spec, *seed)?,
                    _ => return Err(Error::Config("lgcp target needs exactly one of `counts` or `counts_seed`".into())),
                };
                let lik: SharedDensity = Arc::new(LgcpLikelihood::new(spec, &c)?);
                AnnealedPath::tempered(Arc::new(LgcpPrior::new(spec)?), lik, schedule)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    #[serde(default)]
    pub path: Option<PathKind>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub smc: Option<SmcConfig>,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(target: TargetSpec, seed: u64) -> Self {
        Self {
            target,
            path: None,
            schedule: Schedule::default(),
            train: TrainConfig { seed, ..Default::default() },
            sample: SampleConfig::default(),
            smc: None,
            seed,
            output: default_output(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.sample.samples == 0 || self.sample.reps == 0 {
            return Err(Error::Config("sampling needs S >= 1 and reps >= 1".into()));
        }
        if let Some(smc) = &self.smc {
            smc.hmc.validate()?;
        }
        Ok(())
    }

    pub fn build_path(&self) -> Result<AnnealedPath> {
        self.target.build(self.path, self.schedule)
    }

    pub fn smc_config(&self) -> SmcConfig {
        self.smc.unwrap_or(SmcConfig { hmc: self.target.default_hmc(), ..Default::default() })
    }
}

/// Random directions used for sliced W2 in reports.
pub const W2_PROJECTIONS: usize = 64;

/// Seed of repetition `rep` of a run seeded with `seed`.
pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    rng::derive_seed(seed, rep as u64)
}

fn w2_against_target(spec: &TargetSpec, x: &Array2<f64>, w: &[f64], seed: u64) -> Result<Option<f64>> {
    match spec.exact_samples(x.nrows(), rng::derive_seed(seed, 101))? {
        Some(reference) => {
            Ok(Some(sliced_w2(x.view(), Some(w), reference.view(), None, W2_PROJECTIONS, rng::derive_seed(seed, 102))?))
        }
        None => Ok(None),
    }
}

/// One flow sampling repetition and its report.
pub fn flow_report(
    cfg: &ExperimentConfig,
    path: &AnnealedPath,
    model: &FlowModel,
    rep: usize,
) -> Result<(RunReport, SampleOutput)> {
    let seed = rep_seed(cfg.seed, rep);
    let start = Instant::now();
    let out = sample(path, model, Some(&model.means), &cfg.sample, seed)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let w = out.weights.as_slice().expect("contiguous");
    let report = RunReport {
        method: if cfg.sample.weighted { "lfis".into() } else { "lfis-unweighted".into() },
        target: cfg.target.tag(),
        steps: model.params.len(),
        n: cfg.sample.samples,
        seed,
        log_z_hat: out.log_z_hat,
        log_z_path: Some(out.log_z_path),
        ess: out.ess,
        sliced_w2: w2_against_target(&cfg.target, &out.x, w, seed)?,
        wall_time_s,
        config: serde_json::json!({ "experiment": cfg, "rep": rep }),
    };
    Ok((report, out))
}

/// One SMC repetition and its report.
pub fn smc_report(cfg: &ExperimentConfig, path: &AnnealedPath, rep: usize) -> Result<(RunReport, SmcOutput)> {
    let seed = rep_seed(cfg.seed, rep);
    let smc = cfg.smc_config();
    let start = Instant::now();
    let out = run_smc(path, &smc, seed)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let w = out.weights.as_slice().expect("contiguous");
    let report = RunReport {
        method: "smc".into(),
        target: cfg.target.tag(),
        steps: smc.steps,
        n: smc.particles,
        seed,
        log_z_hat: out.log_z,
        log_z_path: None,
        ess: out.ess,
        sliced_w2: w2_against_target(&cfg.target, &out.x, w, seed)?,
        wall_time_s,
        config: serde_json::json!({ "experiment": cfg, "smc": smc, "rep": rep }),
    };
    Ok((report, out))
}

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "lfis-flow-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub steps: usize,
    pub dim: usize,
    pub widths: [usize; 2],
    pub activation: Activation,
    pub target: TargetSpec,
    pub path: PathKind,
    pub schedule: Schedule,
    pub means: Vec<f64>,
    pub seed: u64,
    pub meta: Vec<StepMeta>,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

pub fn step_file(k: usize) -> String {
    format!("step_{k:04}.json")
}

/// Writes the flow and its manifest into `dir`, creating it if needed.
pub fn save_flow(dir: &Path, model: &FlowModel, cfg: &ExperimentConfig) -> Result<Manifest> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(model.params.len());
    for (k, p) in model.params.iter().enumerate() {
        let name = step_file(k);
        StepCheckpoint::new(k, p.clone()).save(&dir.join(&name))?;
        files.push(name);
    }
    let first = &model.params[0];
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        steps: model.params.len(),
        dim: first.dim,
        widths: first.widths,
        activation: first.activation,
        target: cfg.target.clone(),
        path: cfg.path.unwrap_or(cfg.target.natural_path()),
        schedule: cfg.schedule,
        means: model.means.clone(),
        seed: cfg.seed,
        meta: model.meta.clone(),
        files,
        config: cfg.clone(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_flow(dir: &Path) -> Result<(FlowModel, Manifest)> {
    let path = dir.join(MANIFEST);
    let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&s)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Schema(format!("unknown manifest format `{}`", manifest.format)));
    }
    if manifest.files.len() != manifest.steps || manifest.means.len() != manifest.steps {
        return Err(Error::Schema("manifest step count disagrees with its contents".into()));
    }
    let mut params = Vec::with_capacity(manifest.steps);
    for (k, name) in manifest.files.iter().enumerate() {
        let ck = StepCheckpoint::load(&dir.join(name))?;
        if ck.step != k || ck.params.dim != manifest.dim || ck.params.widths != manifest.widths {
            return Err(Error::Schema(format!("{name} does not match the manifest")));
        }
        params.push(ck.params);
    }
    let model = FlowModel::new(params, manifest.means.clone(), manifest.meta.clone())?;
    Ok((model, manifest))
}
