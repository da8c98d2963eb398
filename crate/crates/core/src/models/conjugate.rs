use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::rng::Rng;

/// Closed-form posterior of a conjugate model, over constrained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConjugatePosterior {
    /// Shape/rate parameterization.
    Gamma {
        shape: f64,
        rate: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    Dirichlet {
        alpha: Vec<f64>,
    },
}

impl ConjugatePosterior {
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            ConjugatePosterior::Gamma { shape, rate } => {
                vec![Gamma::new(*shape, 1.0 / rate).expect("valid gamma").sample(rng)]
            }
            ConjugatePosterior::Beta { a, b } => vec![Beta::new(*a, *b).expect("valid beta").sample(rng)],
            ConjugatePosterior::Dirichlet { alpha } => sample_dirichlet(alpha, rng),
        }
    }

    /// Density with respect to Lebesgue measure on the free coordinates
    /// (the first `K-1` simplex coordinates for the Dirichlet).
    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        match self {
            ConjugatePosterior::Gamma { shape, rate } => gamma_log_pdf(theta[0], *shape, *rate),
            ConjugatePosterior::Beta { a, b } => beta_log_pdf(theta[0], *a, *b),
            ConjugatePosterior::Dirichlet { alpha } => dirichlet_log_pdf(theta, alpha),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            ConjugatePosterior::Gamma { shape, rate } => vec![shape / rate],
            ConjugatePosterior::Beta { a, b } => vec![a / (a + b)],
            ConjugatePosterior::Dirichlet { alpha } => {
                let s: f64 = alpha.iter().sum();
                alpha.iter().map(|a| a / s).collect()
            }
        }
    }
}

pub(crate) fn sample_dirichlet(alpha: &[f64], rng: &mut Rng) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("valid gamma").sample(rng))
        .collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / s).collect()
}

pub(crate) fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub(crate) fn beta_log_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

pub(crate) fn dirichlet_log_pdf(theta: &[f64], alpha: &[f64]) -> f64 {
    if theta.iter().any(|&t| t <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let s: f64 = alpha.iter().sum();
    ln_gamma(s) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
        + alpha.iter().zip(theta).map(|(a, t)| (a - 1.0) * t.ln()).sum::<f64>()
}
