//! Dirichlet–Categorical model over three categories.

use rand::Rng as _;

use super::conjugate::{dirichlet_log_pdf, sample_dirichlet};
use super::{ConjugatePosterior, Diffeomorphism, Model};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `θ ~ Dir(α₁, α₂, α₃)`, `x | θ ~ Cat(θ)` with `x ∈ {0, 1, 2}`.
///
/// Constrained parameters are the full 3-vector on the simplex; the
/// unconstrained space is 2-dimensional with the third logit pinned to 0.
#[derive(Debug, Clone)]
pub struct DirichletCategorical {
    pub alpha: [f64; 3],
    transform: Diffeomorphism,
}

pub fn make_dirichlet_categorical(alpha: [f64; 3]) -> Result<DirichletCategorical> {
    if alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "Dirichlet concentrations must be > 0, got {alpha:?}"
        )));
    }
    Ok(DirichletCategorical {
        alpha,
        transform: Diffeomorphism::AdditiveLogRatio,
    })
}

impl DirichletCategorical {
    pub fn exact_posterior(&self, data: &[usize]) -> ConjugatePosterior {
        let mut alpha = self.alpha.to_vec();
        for &x in data {
            alpha[x] += 1.0;
        }
        ConjugatePosterior::Dirichlet { alpha }
    }
}

impl Model for DirichletCategorical {
    type Obs = usize;

    fn name(&self) -> &'static str {
        "dirichlet_categorical"
    }

    fn transform(&self) -> &Diffeomorphism {
        &self.transform
    }

    fn prior_sample(&self, rng: &mut Rng) -> Vec<f64> {
        sample_dirichlet(&self.alpha, rng)
    }

    fn simulate(&self, rng: &mut Rng, theta: &[f64], n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if u < theta[0] {
                    0
                } else if u < theta[0] + theta[1] {
                    1
                } else {
                    2
                }
            })
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        dirichlet_log_pdf(theta, &self.alpha)
    }

    fn grad_log_prior(&self, theta: &[f64], grad: &mut [f64]) {
        for k in 0..3 {
            grad[k] = (self.alpha[k] - 1.0) / theta[k];
        }
    }

    fn per_example_log_lik(&self, theta: &[f64], x: &usize) -> f64 {
        theta[*x].ln()
    }

    fn grad_log_lik(&self, theta: &[f64], x: &usize, grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        grad[*x] = 1.0 / theta[*x];
    }
}
