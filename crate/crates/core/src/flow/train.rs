//! Step-by-step training of the velocity networks.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::field::{FlowModel, StepMeta};
use super::transport::{apply_step, generate_samples, Ensemble, TransportOptions};
use crate::annealing::{weighted_mean, AnnealedPath};
use crate::error::{Error, Result};
use crate::math::variance;
use crate::nn::{Activation, Adam, AdamConfig, NetParams, HIDDEN};
use crate::rng::{self, Rng64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of time steps `T`.
    pub steps: usize,
    /// Particles used to estimate each step's mean of `∂_t log ρ̃`.
    pub pool: usize,
    /// Batch size; `None` picks 2000 for `D <= 10` and 10000 otherwise.
    pub batch: Option<usize>,
    pub max_epochs: usize,
    /// Stop a step once mean(ε²) / var(∂_t log ρ̃) falls below this.
    pub threshold: f64,
    pub adam: AdamConfig,
    pub widths: [usize; 2],
    pub activation: Activation,
    pub seed: u64,
    /// Draw batches from the persistent pool instead of transporting fresh
    /// samples each epoch; `None` enables it for `D < 10`.
    pub reuse_pool: Option<bool>,
    pub weights_in_training: bool,
    pub transport: TransportOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 64,
            pool: 50_000,
            batch: None,
            max_epochs: 2000,
            threshold: 1e-3,
            adam: AdamConfig::default(),
            widths: HIDDEN,
            activation: Activation::Tanh,
            seed: 0,
            reuse_pool: None,
            weights_in_training: true,
            transport: TransportOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if self.pool == 0 || self.batch == Some(0) {
            return Err(Error::Config("pool and batch sizes must be positive".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config("convergence threshold must be positive".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn batch_for(&self, dim: usize) -> usize {
        self.batch.unwrap_or(if dim <= 10 { 2000 } else { 10_000 })
    }

    pub fn reuse_pool_for(&self, dim: usize) -> bool {
        self.reuse_pool.unwrap_or(dim < 10)
    }
}

/// Trains all `T` steps. The pool of `N` particles is carried forward one
/// step at a time with the network just trained, so each step costs one
/// transport of the pool rather than `k`.
pub fn train_flow(path: &AnnealedPath, cfg: &TrainConfig) -> Result<FlowModel> {
    cfg.validate()?;
    let d = path.dim();
    let steps = cfg.steps;
    let batch_size = cfg.batch_for(d);
    let reuse = cfg.reuse_pool_for(d);
    let schedule = path.schedule();

    let mut init_rng = rng::stream(cfg.seed, 1);
    let mut pool_rng = rng::stream(cfg.seed, 2);
    let mut batch_rng = rng::stream(cfg.seed, 3);

    let mut params = NetParams::init(d, cfg.widths, cfg.activation, &mut init_rng);
    let mut pool = Ensemble::new(path.sample_start(cfg.pool, &mut pool_rng));
    let mut model = FlowModel::empty();

    for k in 0..steps {
        let (tau, dtau) = schedule.at_step(k, steps);
        let batch = path.eval_batch(pool.x.view())?;
        let dt = batch.dt_log_rho(dtau);
        let w = if cfg.weights_in_training { pool.weights() } else { pool.uniform_weights() };
        let mean = weighted_mean(&w, &dt);
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { step: k, reason: "non-finite weighted mean".into() });
        }
        let pool_ess = pool.ess();

        let mut meta = if reuse {
            let score = batch.score(tau);
            let source = &dt - mean;
            fit(&mut params, cfg, k, |rng| Ok(subsample(&pool.x, &score, &source, batch_size, rng)), &mut batch_rng)?
        } else {
            fit(
                &mut params,
                cfg,
                k,
                |rng| {
                    let ens = generate_samples(path, &model, Some(&model.means), steps, k, batch_size, rng, cfg.transport)?;
                    let b = path.eval_batch(ens.x.view())?;
                    let source = b.dt_log_rho(dtau) - mean;
                    Ok((ens.x, b.score(tau), source))
                },
                &mut batch_rng,
            )?
        };
        meta.pool_ess = pool_ess;
        log::info!(
            "step {k}/{steps}: epochs {} loss {:.3e} criterion {:.3e}{}",
            meta.epochs,
            meta.loss,
            meta.criterion,
            if meta.converged { "" } else { " (not converged)" }
        );
        model.push(params.clone(), mean, meta);

        if k + 1 < steps {
            let (v, div) = params.eval_batch(pool.x.view())?;
            apply_step(&mut pool, &batch, &v, &div, schedule, steps, Some(mean), cfg.transport)
                .map_err(|e| Error::TrainingDiverged { step: k, reason: e.to_string() })?;
        }
    }
    Ok(model)
}

type Draw = (Array2<f64>, Array2<f64>, Array1<f64>);

fn subsample(x: &Array2<f64>, score: &Array2<f64>, source: &Array1<f64>, b: usize, rng: &mut Rng64) -> Draw {
    let n = x.nrows();
    if b >= n {
        return (x.clone(), score.clone(), source.clone());
    }
    let idx = index::sample(rng, n, b).into_vec();
    (x.select(Axis(0), &idx), score.select(Axis(0), &idx), source.select(Axis(0), &idx))
}

/// Adam on the residual loss until the criterion is met or epochs run out.
fn fit<D>(params: &mut NetParams, cfg: &TrainConfig, step: usize, mut draw: D, rng: &mut Rng64) -> Result<StepMeta>
where
    D: FnMut(&mut Rng64) -> Result<Draw>,
{
    let mut adam = Adam::new(cfg.adam, params);
    let mut meta = StepMeta {
        epochs: 0,
        loss: f64::NAN,
        criterion: f64::INFINITY,
        converged: false,
        lr: cfg.adam.lr,
        pool_ess: f64::NAN,
    };
    for epoch in 0..=cfg.max_epochs {
        let (x, score, source) = draw(rng)?;
        let (loss, grad) = residual_loss(params, x.view(), score.view(), source.view(), step)?;
        let var = variance(source.as_slice().expect("contiguous"));
        let criterion = if var > 0.0 { loss / var } else { loss };
        meta.epochs = epoch;
        meta.loss = loss;
        meta.criterion = criterion;
        meta.lr = adam.lr();
        if criterion < cfg.threshold {
            meta.converged = true;
            break;
        }
        if epoch == cfg.max_epochs {
            break;
        }
        adam.step(params, &grad).map_err(|e| Error::TrainingDiverged { step, reason: e.to_string() })?;
        adam.observe(loss);
    }
    Ok(meta)
}

fn residual_loss(
    params: &NetParams,
    x: ArrayView2<f64>,
    score: ArrayView2<f64>,
    source: ArrayView1<f64>,
    step: usize,
) -> Result<(f64, NetParams)> {
    let out = params.loss_and_grad(x, score, source)?;
    if !out.loss.is_finite() {
        return Err(Error::TrainingDiverged { step, reason: format!("loss is {}", out.loss) });
    }
    Ok((out.loss, out.grad))
}
