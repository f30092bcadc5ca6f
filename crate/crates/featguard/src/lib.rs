//! Detection of classifier failure modes from feature-space density.
//!
//! The pipeline: train a small feedforward classifier whose last hidden layer
//! is tanh-bounded, fit a diagonal-covariance Gaussian mixture to the feature
//! vectors of correctly classified training data, and flag test inputs whose
//! feature log-density falls below a threshold chosen on held-out data. Low
//! density correlates with misclassification, adversarial perturbation, and
//! out-of-distribution inputs.
//!
//! Modules:
//! - [`data`]: synthetic blob/noise generators, CSV IO, deterministic splits
//! - [`classifier`]: feedforward network with explicit forward/backward passes
//! - [`gmm`]: diagonal-covariance Gaussian mixture fit by EM
//! - [`scoring`]: per-sample suspicion scores, calibration, thresholds
//! - [`stats`]: rank tests and ranking metrics for detector evaluation
//! - [`attack`]: gradient-sign adversarial perturbations
//! - [`purify`]: gradient flow of features toward high-density regions

pub mod attack;
pub mod classifier;
pub mod data;
pub mod error;
pub mod gmm;
mod numeric;
pub mod purify;
pub mod scoring;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
