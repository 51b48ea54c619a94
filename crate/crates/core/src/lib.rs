//! Diffusion-based adversarial purification for PMU event classification.
//!
//! The crate covers the full experimental loop: synthetic multivariate PMU
//! event windows, a small convolutional event classifier, five gradient-based
//! adversarial attacks, a truncated diffusion purifier with deterministic
//! implicit (DDIM) backward steps, four classical purification baselines, and
//! an evaluation harness that produces F1 grids, L2-distance traces, and
//! latency tables.

pub mod attacks;
pub mod baselines;
pub mod classifier;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
