//! Liouville flow importance sampling.
//!
//! A sequence of small neural velocity fields is trained, one per annealing
//! step, so that particles drawn from a tractable reference are carried along
//! a prescribed path of unnormalized densities. The residual of the
//! continuity equation, accumulated along each trajectory, gives a dynamic
//! importance weight; two marginal-likelihood estimators are built on top.
//!
//! Module map:
//!
//! - [`nn`]: fixed-architecture MLP with exact input divergence and exact
//!   parameter gradients of the residual loss, plus Adam.
//! - [`targets`]: benchmark densities (mixture, funnel, logistic regression,
//!   log-Gaussian Cox process) and dataset ingestion.
//! - [`annealing`]: schedules and the annealed path.
//! - [`flow`]: particle transport, training, sampling and both estimators.
//! - [`smc`]: sequential Monte Carlo with HMC kernels, the gold standard.
//! - [`metrics`]: ESS, sliced Wasserstein-2, run reports and aggregation.
//! - [`experiment`]: JSON run configuration and checkpoint layout.
//!
//! Data-parallel loops go through [`par`]; with the `parallel` feature they run
//! on rayon, otherwise sequentially. Chunking is fixed, so both modes produce
//! bit-identical results.

pub mod annealing;
pub mod error;
pub mod math;
pub mod experiment;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;
pub mod smc;
pub mod targets;

pub use error::{Error, Result};
