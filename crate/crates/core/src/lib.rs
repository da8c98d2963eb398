//! Noise-aware differentially private variational inference.
//!
//! The crate runs DP-SGD on a Monte-Carlo ELBO, records the released
//! parameter/noisy-gradient trace, and post-processes that trace with a
//! Bayesian linear-Gaussian gradient model. The result is a mixture of
//! variational Gaussians whose spread accounts for the privacy noise.
//!
//! Modules, bottom-up:
//!
//! - [`accountant`]: Rényi-DP accounting and noise calibration for the
//!   Poisson-subsampled Gaussian mechanism.
//! - [`models`]: the model contract, parameter transforms and the five
//!   experiment models.
//! - [`vi`]: diagonal-Gaussian variational family, per-example ELBO terms and
//!   their reparameterized gradients.
//! - [`dpsgd`]: clipped, preconditioned, noisy SGD with trace recording.
//! - [`postprocess`]: trace-derived priors, the gradient-model posterior,
//!   Laplace and HMC fits, and the final mixture posterior.
//! - [`evaluation`]: TARP coverage, RMSE summaries and calibration curves.
//! - [`experiment`]: config-driven runner, UCI Adult ingestion and CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod dpsgd;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod math;
pub mod models;
pub mod postprocess;
pub mod rng;
pub mod vi;

pub use error::{Error, Result};
