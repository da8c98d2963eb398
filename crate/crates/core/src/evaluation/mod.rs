//! TARP coverage of posterior samplers and calibration of binary predictions.
//!
//! Distances are Euclidean in the unconstrained parameter space; the true
//! parameter is pushed through the model's transform before comparison.

mod calibration;
mod tarp;

pub use calibration::{calibration_curve, CalibrationBin, CalibrationReport};
pub use tarp::{
    coverage_from_f, default_alpha_grid, marginal_coverages, rmse, tarp_coverage, tarp_f, tarp_multi, CoverageReport,
    PosteriorSampler, ReferenceSampler, TarpConfig, TarpOutcome,
};
