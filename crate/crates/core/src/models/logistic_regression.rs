//! Bayesian logistic regression with a standard normal prior.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{Diffeomorphism, Example, Model};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid, LN_2PI};
use crate::rng::Rng;

/// `θ ~ N(0, I)`, `y | x ~ Bernoulli(σ(θᵀx̃))` where `x̃` is `x` with a trailing
/// 1 when the bias is enabled. Labels are stored as `0.0` / `1.0`.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub features: usize,
    pub bias: bool,
    transform: Diffeomorphism,
}

/// Logistic regression over `p` features with a bias term.
pub fn make_logistic_regression(p: usize) -> Result<LogisticRegression> {
    LogisticRegression::new(p, true)
}

impl LogisticRegression {
    pub fn new(features: usize, bias: bool) -> Result<Self> {
        if features == 0 {
            return Err(Error::InvalidArgument("logistic regression needs p >= 1".into()));
        }
        let n = features + usize::from(bias);
        Ok(Self {
            features,
            bias,
            transform: Diffeomorphism::identity(n),
        })
    }

    pub fn linear_predictor(&self, theta: &[f64], x: &[f64]) -> f64 {
        let mut eta: f64 = theta[..self.features].iter().zip(x).map(|(a, b)| a * b).sum();
        if self.bias {
            eta += theta[self.features];
        }
        eta
    }

    /// `p(y = 1 | x, θ)`.
    pub fn predict_proba(&self, theta: &[f64], x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(theta, x))
    }
}

impl Model for LogisticRegression {
    type Obs = Example;

    fn name(&self) -> &'static str {
        "logistic_regression"
    }

    fn transform(&self) -> &Diffeomorphism {
        &self.transform
    }

    fn prior_sample(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.param_dim()).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn simulate(&self, rng: &mut Rng, theta: &[f64], n: usize) -> Vec<Example> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..self.features).map(|_| StandardNormal.sample(rng)).collect();
                let p = self.predict_proba(theta, &x);
                let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                Example { x, y }
            })
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        theta.iter().map(|t| -0.5 * (t * t + LN_2PI)).sum()
    }

    fn grad_log_prior(&self, theta: &[f64], grad: &mut [f64]) {
        for (g, t) in grad.iter_mut().zip(theta) {
            *g = -t;
        }
    }

    fn per_example_log_lik(&self, theta: &[f64], x: &Example) -> f64 {
        let eta = self.linear_predictor(theta, &x.x);
        x.y * log_sigmoid(eta) + (1.0 - x.y) * log_sigmoid(-eta)
    }

    fn grad_log_lik(&self, theta: &[f64], x: &Example, grad: &mut [f64]) {
        let resid = x.y - self.predict_proba(theta, &x.x);
        for (g, xj) in grad.iter_mut().zip(&x.x) {
            *g = resid * xj;
        }
        if self.bias {
            grad[self.features] = resid;
        }
    }
}
