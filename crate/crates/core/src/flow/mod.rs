//! Velocity fields, particle transport, training and sampling.

pub mod field;
pub mod sample;
pub mod train;
pub mod transport;

pub use field::{FlowModel, GaussianOracle, StepMeta, VelocityField};
pub use sample::{sample, SampleConfig, SampleOutput};
pub use train::{train_flow, TrainConfig};
pub use transport::{
    advance, apply_step, generate_samples, Ensemble, MeanBranch, Quadrature, TransportOptions,
};
