use thiserror::Error;

/// Errors raised anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("accountant did not converge: {0}")]
    NonConvergence(String),

    #[error(
        "no noise multiplier in [{sigma_min}, {sigma_max}] achieves epsilon {epsilon} (epsilon at sigma_max is {epsilon_at_max})"
    )]
    Infeasible {
        epsilon: f64,
        sigma_min: f64,
        sigma_max: f64,
        epsilon_at_max: f64,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("DP-SGD diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("degenerate trace: coordinate {coordinate} has zero spread after burn-in")]
    DegenerateTrace { coordinate: usize },

    #[error("Hessian is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("MAP search did not converge: gradient norm {grad_norm:e} > tolerance {tolerance:e}")]
    MapNotConverged { grad_norm: f64, tolerance: f64 },

    #[error("HMC adaptation failed: mean acceptance {acceptance:.3} after warmup")]
    PathologicalAdaptation { acceptance: f64 },

    #[error("{failures} of {total} repetitions failed (limit 5%); first failure: {first}")]
    FailureRate { failures: usize, total: usize, first: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
