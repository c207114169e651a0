//! Synthetic volumetric tasks, losses, metrics and a small training loop.

pub mod data;
pub mod loss;
pub mod metrics;
pub mod train;
