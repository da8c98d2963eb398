use serde::{Deserialize, Serialize};

use crate::math::{inv_softplus, log_sigmoid, logit, sigmoid, softplus};

/// Scalar link used by [`Diffeomorphism::Elementwise`]; maps unconstrained
/// `z` to a constrained value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Identity,
    /// `θ = softplus(z)`, θ > 0.
    Softplus,
    /// `θ = 1 / (1 + e^{-z})`, θ ∈ (0, 1).
    Logit,
}

/// Smooth bijection `U: Θ → ℝⁿ` together with the pieces of `U⁻¹` needed by
/// reparameterized gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Diffeomorphism {
    /// One link per coordinate.
    Elementwise(Vec<Link>),
    /// Additive log-ratio for the 3-simplex: `U⁻¹(z₁, z₂) = softmax(z₁, z₂, 0)`.
    AdditiveLogRatio,
}

impl Diffeomorphism {
    pub fn identity(n: usize) -> Self {
        Diffeomorphism::Elementwise(vec![Link::Identity; n])
    }

    pub fn unconstrained_dim(&self) -> usize {
        match self {
            Diffeomorphism::Elementwise(links) => links.len(),
            Diffeomorphism::AdditiveLogRatio => 2,
        }
    }

    pub fn constrained_dim(&self) -> usize {
        match self {
            Diffeomorphism::Elementwise(links) => links.len(),
            Diffeomorphism::AdditiveLogRatio => 3,
        }
    }

    /// `U(θ)`.
    pub fn forward(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Diffeomorphism::Elementwise(links) => links
                .iter()
                .zip(theta)
                .map(|(link, &t)| match link {
                    Link::Identity => t,
                    Link::Softplus => inv_softplus(t),
                    Link::Logit => logit(t),
                })
                .collect(),
            Diffeomorphism::AdditiveLogRatio => {
                vec![(theta[0] / theta[2]).ln(), (theta[1] / theta[2]).ln()]
            }
        }
    }

    /// `U⁻¹(z)`.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.constrained_dim()];
        self.inverse_into(z, &mut out);
        out
    }

    pub fn inverse_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Diffeomorphism::Elementwise(links) => {
                for ((o, link), &v) in out.iter_mut().zip(links).zip(z) {
                    *o = match link {
                        Link::Identity => v,
                        Link::Softplus => softplus(v),
                        Link::Logit => sigmoid(v),
                    };
                }
            }
            Diffeomorphism::AdditiveLogRatio => {
                let m = z[0].max(z[1]).max(0.0);
                let e = [(z[0] - m).exp(), (z[1] - m).exp(), (-m).exp()];
                let s: f64 = e.iter().sum();
                for (o, v) in out.iter_mut().zip(e) {
                    *o = v / s;
                }
            }
        }
    }

    /// `log |det J_{U⁻¹}(z)|`.
    pub fn log_abs_det_jacobian_inverse(&self, z: &[f64]) -> f64 {
        match self {
            Diffeomorphism::Elementwise(links) => links
                .iter()
                .zip(z)
                .map(|(link, &v)| match link {
                    Link::Identity => 0.0,
                    Link::Softplus => log_sigmoid(v),
                    Link::Logit => log_sigmoid(v) + log_sigmoid(-v),
                })
                .sum(),
            Diffeomorphism::AdditiveLogRatio => {
                let theta = self.inverse(z);
                theta.iter().map(|t| t.ln()).sum()
            }
        }
    }

    /// Gradient of [`Self::log_abs_det_jacobian_inverse`] with respect to `z`,
    /// added into `grad`.
    pub fn add_grad_log_abs_det(&self, z: &[f64], theta: &[f64], grad: &mut [f64]) {
        match self {
            Diffeomorphism::Elementwise(links) => {
                for ((g, link), &v) in grad.iter_mut().zip(links).zip(z) {
                    *g += match link {
                        Link::Identity => 0.0,
                        Link::Softplus => sigmoid(-v),
                        Link::Logit => 1.0 - 2.0 * sigmoid(v),
                    };
                }
            }
            Diffeomorphism::AdditiveLogRatio => {
                for k in 0..2 {
                    grad[k] += 1.0 - 3.0 * theta[k];
                }
            }
        }
    }

    /// Vector-Jacobian product `J_{U⁻¹}(z)ᵀ g`, added into `out`, where `g` is
    /// a gradient with respect to the constrained `theta = U⁻¹(z)`.
    pub fn add_vjp(&self, z: &[f64], theta: &[f64], g: &[f64], out: &mut [f64]) {
        match self {
            Diffeomorphism::Elementwise(links) => {
                for (k, link) in links.iter().enumerate() {
                    out[k] += g[k]
                        * match link {
                            Link::Identity => 1.0,
                            Link::Softplus => sigmoid(z[k]),
                            Link::Logit => theta[k] * (1.0 - theta[k]),
                        };
                }
            }
            Diffeomorphism::AdditiveLogRatio => {
                let inner: f64 = g.iter().zip(theta).map(|(a, b)| a * b).sum();
                for k in 0..2 {
                    out[k] += theta[k] * (g[k] - inner);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use nalgebra::DMatrix;
    use rand::Rng as _;

    fn transforms() -> Vec<Diffeomorphism> {
        vec![
            Diffeomorphism::Elementwise(vec![Link::Softplus]),
            Diffeomorphism::Elementwise(vec![Link::Logit]),
            Diffeomorphism::AdditiveLogRatio,
            Diffeomorphism::Elementwise(vec![Link::Identity, Link::Softplus, Link::Logit]),
        ]
    }

    /// Square part of the inverse map (drops the redundant simplex coordinate).
    fn reduced_inverse(t: &Diffeomorphism, z: &[f64]) -> Vec<f64> {
        let mut th = t.inverse(z);
        th.truncate(t.unconstrained_dim());
        th
    }

    #[test]
    fn round_trips_on_random_points() {
        let mut rng = rng_from_seed(11);
        for t in transforms() {
            for _ in 0..100 {
                let z: Vec<f64> = (0..t.unconstrained_dim()).map(|_| rng.random_range(-4.0..4.0)).collect();
                let back = t.forward(&t.inverse(&z));
                for (a, b) in z.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-8, "{t:?}: {a} vs {b}");
                }
                let theta = t.inverse(&z);
                let again = t.inverse(&t.forward(&theta));
                for (a, b) in theta.iter().zip(&again) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn log_det_matches_finite_difference_jacobian() {
        let mut rng = rng_from_seed(12);
        let h = 1e-6;
        for t in transforms() {
            let n = t.unconstrained_dim();
            for _ in 0..20 {
                let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let mut jac = DMatrix::zeros(n, n);
                for k in 0..n {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[k] += h;
                    zm[k] -= h;
                    let (fp, fm) = (reduced_inverse(&t, &zp), reduced_inverse(&t, &zm));
                    for j in 0..n {
                        jac[(j, k)] = (fp[j] - fm[j]) / (2.0 * h);
                    }
                }
                let fd = jac.determinant().abs().ln();
                let exact = t.log_abs_det_jacobian_inverse(&z);
                assert!((fd - exact).abs() < 1e-4 * exact.abs().max(1.0), "{t:?}: {fd} vs {exact}");
                assert!(exact.is_finite());
            }
        }
    }

    #[test]
    fn grad_log_det_matches_finite_differences() {
        let mut rng = rng_from_seed(13);
        let h = 1e-5;
        for t in transforms() {
            let n = t.unconstrained_dim();
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let theta = t.inverse(&z);
            let mut g = vec![0.0; n];
            t.add_grad_log_abs_det(&z, &theta, &mut g);
            for k in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += h;
                zm[k] -= h;
                let fd = (t.log_abs_det_jacobian_inverse(&zp) - t.log_abs_det_jacobian_inverse(&zm)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "{t:?} coord {k}");
            }
        }
    }

    #[test]
    fn known_values() {
        let sp = Diffeomorphism::Elementwise(vec![Link::Softplus]);
        assert!((sp.inverse(&sp.forward(&[2.0]))[0] - 2.0).abs() < 1e-8);
        let lg = Diffeomorphism::Elementwise(vec![Link::Logit]);
        assert_eq!(lg.forward(&[0.5]), vec![0.0]);
        let alr = Diffeomorphism::AdditiveLogRatio;
        let z = alr.forward(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert!(z.iter().all(|v| v.abs() < 1e-15));
        let theta = alr.inverse(&[0.0, 0.0]);
        assert!(theta.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}
