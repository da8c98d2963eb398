//! Probabilistic models and their constrained ↔ unconstrained transforms.
//!
//! A [`Model`] works on *constrained* parameters (rates, probabilities,
//! simplex points, variances). Inference happens in the unconstrained space
//! given by its [`Diffeomorphism`]; the variational engine chains gradients
//! through [`Diffeomorphism::add_vjp`] and adds the log-Jacobian of the inverse map.

mod conjugate;
mod dirichlet_categorical;
mod exponential_families;
mod linear_regression;
mod logistic_regression;
mod transform;

pub use conjugate::ConjugatePosterior;
pub use dirichlet_categorical::{make_dirichlet_categorical, DirichletCategorical};
pub use exponential_families::{make_beta_bernoulli, make_gamma_exponential, BetaBernoulli, GammaExponential};
pub use linear_regression::{make_linear_regression_10d, LinearRegression};
pub use logistic_regression::{make_logistic_regression, LogisticRegression};
pub use transform::{Diffeomorphism, Link};

use serde::{Deserialize, Serialize};
use std::fmt::Debug;

use crate::rng::Rng;

/// Covariate/response pair used by both regression models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Contract every experiment model implements.
///
/// `theta` arguments are constrained parameters (length
/// [`Diffeomorphism::constrained_dim`]). Gradients are with respect to that
/// constrained vector and are written into a caller-provided buffer.
pub trait Model: Send + Sync {
    type Obs: Clone + Debug + Send + Sync;

    fn name(&self) -> &'static str;

    fn transform(&self) -> &Diffeomorphism;

    /// Dimension `n` of the unconstrained parameter space.
    fn param_dim(&self) -> usize {
        self.transform().unconstrained_dim()
    }

    fn prior_sample(&self, rng: &mut Rng) -> Vec<f64>;

    /// `n` i.i.d. observations given `theta`.
    fn simulate(&self, rng: &mut Rng, theta: &[f64], n: usize) -> Vec<Self::Obs>;

    fn log_prior(&self, theta: &[f64]) -> f64;

    fn grad_log_prior(&self, theta: &[f64], grad: &mut [f64]);

    fn per_example_log_lik(&self, theta: &[f64], x: &Self::Obs) -> f64;

    fn grad_log_lik(&self, theta: &[f64], x: &Self::Obs, grad: &mut [f64]);

    /// Log-likelihood of a whole dataset.
    fn log_lik(&self, theta: &[f64], data: &[Self::Obs]) -> f64 {
        data.iter().map(|x| self.per_example_log_lik(theta, x)).sum()
    }

    /// Prior draw pushed into the unconstrained space.
    fn prior_sample_unconstrained(&self, rng: &mut Rng) -> Vec<f64> {
        let theta = self.prior_sample(rng);
        self.transform().forward(&theta)
    }
}
