//! Blind image restoration by diffused-estimator posterior sampling.
//!
//! An L2-trained estimator `f(y)` places the starting state of a reverse
//! diffusion chain at `x_N ~ N(sqrt(α_N) f(y), (1-α_N) I)`; a denoiser trained
//! only on clean images then carries `x_N` back to `x_0`. The estimator's
//! error enters `x_N` scaled by `sqrt(α_N) < 1`.

pub mod analysis;
pub mod degradation;
pub mod error;
pub mod imageio;
pub mod models;
pub mod nn;
pub mod par;
pub mod sampler;
pub mod schedule;
pub mod seed;
pub mod store;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
