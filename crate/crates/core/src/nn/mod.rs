//! Velocity network, its optimizer and on-disk format.

pub mod adam;
pub mod checkpoint;
pub mod mlp;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::StepCheckpoint;
pub use mlp::{Activation, LossEval, NetParams, HIDDEN};
