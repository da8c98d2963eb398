//! Bayesian linear regression with a normal-inverse-gamma prior.

use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::{Diffeomorphism, Example, Link, Model};
use crate::math::LN_2PI;
use crate::rng::Rng;

/// `(w, σ²) ~ N-Γ⁻¹(m, λ, a, b)`, `x ~ N(0, I)`, `y | x ~ N(wᵀ[x, 1], σ²)`.
///
/// Parameters are `(w₁..w_p, bias, σ²)`. Under the prior
/// `σ² ~ InvGamma(a, b)` and `w | σ² ~ N(m, σ²/λ · I)`.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    pub features: usize,
    pub prior_mean: f64,
    pub prior_precision: f64,
    pub shape: f64,
    pub scale: f64,
    transform: Diffeomorphism,
}

/// The 10-feature model with prior `N-Γ⁻¹(0, 1/4, 20, 1/2)`.
pub fn make_linear_regression_10d() -> LinearRegression {
    LinearRegression::new(10, 0.0, 0.25, 20.0, 0.5)
}

impl LinearRegression {
    pub fn new(features: usize, prior_mean: f64, prior_precision: f64, shape: f64, scale: f64) -> Self {
        let mut links = vec![Link::Identity; features + 1];
        links.push(Link::Softplus);
        Self {
            features,
            prior_mean,
            prior_precision,
            shape,
            scale,
            transform: Diffeomorphism::Elementwise(links),
        }
    }

    /// Number of regression weights including the bias.
    pub fn weights(&self) -> usize {
        self.features + 1
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        let p = self.features;
        theta[..p].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + theta[p]
    }
}

impl Model for LinearRegression {
    type Obs = Example;

    fn name(&self) -> &'static str {
        "linear_regression"
    }

    fn transform(&self) -> &Diffeomorphism {
        &self.transform
    }

    fn prior_sample(&self, rng: &mut Rng) -> Vec<f64> {
        let precision: f64 = Gamma::new(self.shape, 1.0 / self.scale).expect("valid").sample(rng);
        let var = 1.0 / precision;
        let sd = (var / self.prior_precision).sqrt();
        let normal = Normal::new(self.prior_mean, sd).expect("valid");
        let mut theta: Vec<f64> = (0..self.weights()).map(|_| normal.sample(rng)).collect();
        theta.push(var);
        theta
    }

    fn simulate(&self, rng: &mut Rng, theta: &[f64], n: usize) -> Vec<Example> {
        let sd = theta[self.weights()].sqrt();
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..self.features).map(|_| StandardNormal.sample(rng)).collect();
                let eps: f64 = StandardNormal.sample(rng);
                let y = self.predict(theta, &x) + sd * eps;
                Example { x, y }
            })
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let k = self.weights();
        let var = theta[k];
        if var <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let w_var = var / self.prior_precision;
        let quad: f64 = theta[..k].iter().map(|w| (w - self.prior_mean).powi(2)).sum();
        let normal = -0.5 * k as f64 * (LN_2PI + w_var.ln()) - quad / (2.0 * w_var);
        let inv_gamma = self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * var.ln() - self.scale / var;
        normal + inv_gamma
    }

    fn grad_log_prior(&self, theta: &[f64], grad: &mut [f64]) {
        let k = self.weights();
        let var = theta[k];
        let mut quad = 0.0;
        for j in 0..k {
            let c = theta[j] - self.prior_mean;
            quad += c * c;
            grad[j] = -c * self.prior_precision / var;
        }
        grad[k] = -0.5 * k as f64 / var + 0.5 * self.prior_precision * quad / (var * var) - (self.shape + 1.0) / var
            + self.scale / (var * var);
    }

    fn per_example_log_lik(&self, theta: &[f64], x: &Example) -> f64 {
        let var = theta[self.weights()];
        let r = x.y - self.predict(theta, &x.x);
        -0.5 * (LN_2PI + var.ln()) - r * r / (2.0 * var)
    }

    fn grad_log_lik(&self, theta: &[f64], x: &Example, grad: &mut [f64]) {
        let k = self.weights();
        let var = theta[k];
        let r = x.y - self.predict(theta, &x.x);
        for (g, xj) in grad.iter_mut().zip(&x.x) {
            *g = r * xj / var;
        }
        grad[self.features] = r / var;
        grad[k] = -0.5 / var + r * r / (2.0 * var * var);
    }
}
