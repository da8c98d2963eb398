//! Gamma–Exponential and Beta–Bernoulli models.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Exp, Gamma};

use super::conjugate::{beta_log_pdf, gamma_log_pdf};
use super::{ConjugatePosterior, Diffeomorphism, Link, Model};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `θ ~ Gamma(α, β)` (rate β), `x | θ ~ Exp(θ)`.
#[derive(Debug, Clone)]
pub struct GammaExponential {
    pub alpha: f64,
    pub beta: f64,
    transform: Diffeomorphism,
}

pub fn make_gamma_exponential(alpha: f64, beta: f64) -> Result<GammaExponential> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Gamma prior needs alpha, beta > 0, got ({alpha}, {beta})"
        )));
    }
    Ok(GammaExponential {
        alpha,
        beta,
        transform: Diffeomorphism::Elementwise(vec![Link::Softplus]),
    })
}

impl GammaExponential {
    pub fn exact_posterior(&self, data: &[f64]) -> ConjugatePosterior {
        ConjugatePosterior::Gamma {
            shape: self.alpha + data.len() as f64,
            rate: self.beta + data.iter().sum::<f64>(),
        }
    }
}

impl Model for GammaExponential {
    type Obs = f64;

    fn name(&self) -> &'static str {
        "gamma_exponential"
    }

    fn transform(&self) -> &Diffeomorphism {
        &self.transform
    }

    fn prior_sample(&self, rng: &mut Rng) -> Vec<f64> {
        vec![Gamma::new(self.alpha, 1.0 / self.beta).expect("validated").sample(rng)]
    }

    fn simulate(&self, rng: &mut Rng, theta: &[f64], n: usize) -> Vec<f64> {
        let exp = Exp::new(theta[0]).expect("positive rate");
        (0..n).map(|_| exp.sample(rng)).collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        gamma_log_pdf(theta[0], self.alpha, self.beta)
    }

    fn grad_log_prior(&self, theta: &[f64], grad: &mut [f64]) {
        grad[0] = (self.alpha - 1.0) / theta[0] - self.beta;
    }

    fn per_example_log_lik(&self, theta: &[f64], x: &f64) -> f64 {
        theta[0].ln() - theta[0] * x
    }

    fn grad_log_lik(&self, theta: &[f64], x: &f64, grad: &mut [f64]) {
        grad[0] = 1.0 / theta[0] - x;
    }
}

/// `θ ~ Beta(α, β)`, `x | θ ~ Bernoulli(θ)`; observations are 0/1 bits.
#[derive(Debug, Clone)]
pub struct BetaBernoulli {
    pub alpha: f64,
    pub beta: f64,
    transform: Diffeomorphism,
}

pub fn make_beta_bernoulli(alpha: f64, beta: f64) -> Result<BetaBernoulli> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Beta prior needs alpha, beta > 0, got ({alpha}, {beta})"
        )));
    }
    Ok(BetaBernoulli {
        alpha,
        beta,
        transform: Diffeomorphism::Elementwise(vec![Link::Logit]),
    })
}

impl BetaBernoulli {
    pub fn exact_posterior(&self, data: &[u8]) -> ConjugatePosterior {
        let ones = data.iter().filter(|&&b| b == 1).count() as f64;
        ConjugatePosterior::Beta {
            a: self.alpha + ones,
            b: self.beta + data.len() as f64 - ones,
        }
    }
}

impl Model for BetaBernoulli {
    type Obs = u8;

    fn name(&self) -> &'static str {
        "beta_bernoulli"
    }

    fn transform(&self) -> &Diffeomorphism {
        &self.transform
    }

    fn prior_sample(&self, rng: &mut Rng) -> Vec<f64> {
        vec![Beta::new(self.alpha, self.beta).expect("validated").sample(rng)]
    }

    fn simulate(&self, rng: &mut Rng, theta: &[f64], n: usize) -> Vec<u8> {
        (0..n).map(|_| u8::from(rng.random::<f64>() < theta[0])).collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        beta_log_pdf(theta[0], self.alpha, self.beta)
    }

    fn grad_log_prior(&self, theta: &[f64], grad: &mut [f64]) {
        grad[0] = (self.alpha - 1.0) / theta[0] - (self.beta - 1.0) / (1.0 - theta[0]);
    }

    fn per_example_log_lik(&self, theta: &[f64], x: &u8) -> f64 {
        if *x == 1 {
            theta[0].ln()
        } else {
            (1.0 - theta[0]).ln()
        }
    }

    fn grad_log_lik(&self, theta: &[f64], x: &u8, grad: &mut [f64]) {
        grad[0] = if *x == 1 { 1.0 / theta[0] } else { -1.0 / (1.0 - theta[0]) };
    }
}
