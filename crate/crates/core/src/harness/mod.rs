//! Synthetic data, label jitter, training and experiment drivers.

pub mod experiments;
pub mod gradcheck;
pub mod jitter;
pub mod metrics;
pub mod scenes;
pub mod train;
