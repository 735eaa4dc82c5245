//! Persistence landscapes of 1-D signals and a convolutional network that
//! uses them as a differentiable layer.
//!
//! - [`topology`]: 0-dimensional persistent homology under the superlevel filtration.
//! - [`landscape`]: sampled persistence landscapes and their gradients.
//! - [`network`]: convolution, persistence, and late layers; training and model files.
//! - [`metrics`]: per-class and per-clip AUC / mean average precision.
//! - [`data`]: feature files, manifests, z-score normalization, synthetic data.
//! - [`analysis`]: landscape/activity correlation and branch weight summaries.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod landscape;
pub mod metrics;
pub mod network;
pub mod topology;

pub use error::{Error, Result};
