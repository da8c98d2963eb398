//! Diagonal-Gaussian variational family and the per-example ELBO decomposition.
//!
//! `q(θ; φ) = N(μ, diag(s²))` over the unconstrained parameters, with
//! `s = softplus(u)` and `φ = (μ, u)`. For draws `θᵢ = μ + s ⊙ εᵢ` the ELBO splits
//! into one term per observation,
//!
//! ```text
//! ℓ(φ; x) = mean_i log p(x | U⁻¹(θᵢ))
//!         + (1/N) · mean_i [log p(U⁻¹(θᵢ)) + log|det J_{U⁻¹}(θᵢ)| − log q(θᵢ; φ)]
//! ```
//!
//! so that `Σ_x ℓ(φ; x)` is the Monte-Carlo ELBO. DP-SGD minimizes `−ℓ`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{inv_softplus, sigmoid, softplus, LN_2PI};
use crate::models::Model;
use crate::rng::Rng;

/// `φ = (μ, u)`; the flat layout used by the optimizer is `[μ..., u...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub u: Vec<f64>,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if mu.len() != u.len() || mu.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "mu and u must have equal nonzero length, got {} and {}",
                mu.len(),
                u.len()
            )));
        }
        Ok(Self { mu, u })
    }

    /// Means `mu` with every scale equal to `scale`.
    pub fn with_scale(mu: Vec<f64>, scale: f64) -> Self {
        let u = vec![inv_softplus(scale); mu.len()];
        Self { mu, u }
    }

    pub fn from_flat(phi: &[f64]) -> Result<Self> {
        if !phi.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "flat parameter vector has odd length {}",
                phi.len()
            )));
        }
        let n = phi.len() / 2;
        Self::new(phi[..n].to_vec(), phi[n..].to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend_from_slice(&self.u);
        v
    }

    /// Number of model parameters `n` (the flat length is `2n`).
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.u.iter().map(|&u| softplus(u)).collect()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(&self.u)
            .zip(theta)
            .map(|((m, &u), t)| {
                let s = softplus(u);
                let z = (t - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * LN_2PI
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElboConfig {
    /// Monte-Carlo draws per evaluation.
    pub n_vi: usize,
    /// Size `N` of the full dataset; weights the prior/entropy term.
    pub dataset_size: usize,
}

impl ElboConfig {
    pub fn new(n_vi: usize, dataset_size: usize) -> Result<Self> {
        if n_vi == 0 || dataset_size == 0 {
            return Err(Error::InvalidArgument("n_vi and dataset_size must be >= 1".into()));
        }
        Ok(Self { n_vi, dataset_size })
    }
}

/// Standard normal draws `ε` (`n_vi × n`, row-major) shared by one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws {
    n: usize,
    eps: Vec<f64>,
}

impl NoiseDraws {
    pub fn sample(rng: &mut Rng, n_vi: usize, n: usize) -> Self {
        let eps = (0..n_vi * n).map(|_| StandardNormal.sample(rng)).collect();
        Self { n, eps }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.first().map_or(0, Vec::len);
        Self {
            n,
            eps: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.eps.len().checked_div(self.n).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.eps[i * self.n..(i + 1) * self.n]
    }
}

/// `m` draws `μ + s ⊙ ε` from `q(·; φ)`.
pub fn sample_variational(params: &VariationalParams, rng: &mut Rng, m: usize) -> Vec<Vec<f64>> {
    let s = params.scales();
    (0..m)
        .map(|_| {
            params
                .mu
                .iter()
                .zip(&s)
                .map(|(mu, sd)| {
                    let e: f64 = StandardNormal.sample(rng);
                    mu + sd * e
                })
                .collect()
        })
        .collect()
}

/// ELBO pieces for fixed `(φ, ε)`. The prior/entropy term and the transformed
/// draws are computed once and reused for every observation.
pub struct ElboEvaluator<'a, M: Model> {
    model: &'a M,
    eps: &'a NoiseDraws,
    /// `σ(u)`, the derivative of the softplus scales.
    dscale: Vec<f64>,
    z: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    inv_n: f64,
    global_value: f64,
    global_grad: Vec<f64>,
}

impl<'a, M: Model> ElboEvaluator<'a, M> {
    pub fn new(model: &'a M, params: &VariationalParams, eps: &'a NoiseDraws, dataset_size: usize) -> Result<Self> {
        let n = params.dim();
        if n != model.param_dim() || eps.n != n || eps.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "dimension mismatch: params {n}, model {}, draws {}",
                model.param_dim(),
                eps.n
            )));
        }
        let transform = model.transform();
        let s = params.scales();
        let dscale: Vec<f64> = params.u.iter().map(|&u| sigmoid(u)).collect();
        let m = eps.len();
        let mut z = Vec::with_capacity(m);
        let mut theta = Vec::with_capacity(m);
        let mut value = 0.0;
        let mut grad = vec![0.0; 2 * n];
        let mut g_con = vec![0.0; transform.constrained_dim()];
        let mut g_z = vec![0.0; n];
        for i in 0..m {
            let e = eps.row(i);
            let zi: Vec<f64> = (0..n).map(|j| params.mu[j] + s[j] * e[j]).collect();
            let ti = transform.inverse(&zi);
            let log_prior = model.log_prior(&ti) + transform.log_abs_det_jacobian_inverse(&zi);
            let log_q: f64 = (0..n).map(|j| -0.5 * e[j] * e[j] - s[j].ln() - 0.5 * LN_2PI).sum();
            value += log_prior - log_q;

            model.grad_log_prior(&ti, &mut g_con);
            g_z.iter_mut().for_each(|g| *g = 0.0);
            transform.add_vjp(&zi, &ti, &g_con, &mut g_z);
            transform.add_grad_log_abs_det(&zi, &ti, &mut g_z);
            for j in 0..n {
                grad[j] += g_z[j];
                grad[n + j] += g_z[j] * e[j] * dscale[j];
            }
            z.push(zi);
            theta.push(ti);
        }
        let inv_m = 1.0 / m as f64;
        value *= inv_m;
        for g in grad.iter_mut() {
            *g *= inv_m;
        }
        // entropy: d/du_j of -log q along the reparameterized path
        for j in 0..n {
            grad[n + j] += dscale[j] / s[j];
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "prior/entropy term of the ELBO is {value} (prior support violated after transform)"
            )));
        }
        Ok(Self {
            model,
            eps,
            dscale,
            z,
            theta,
            inv_n: 1.0 / dataset_size as f64,
            global_value: value,
            global_grad: grad,
        })
    }

    /// Monte-Carlo average of `log p(U⁻¹(θᵢ)) + log|J| − log q(θᵢ)`.
    pub fn global_term(&self) -> f64 {
        self.global_value
    }

    /// The per-example ELBO contribution `ℓ(φ; x)`.
    pub fn loss(&self, x: &M::Obs) -> Result<f64> {
        let ll: f64 = self.theta.iter().map(|t| self.model.per_example_log_lik(t, x)).sum::<f64>() / self.theta.len() as f64;
        let v = ll + self.inv_n * self.global_value;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("per-example loss is {v}")));
        }
        Ok(v)
    }

    /// `∇_φ ℓ(φ; x)` written into `out` (length `2n`).
    pub fn grad_into(&self, x: &M::Obs, out: &mut [f64]) -> Result<()> {
        let n = self.dscale.len();
        let transform = self.model.transform();
        let mut g_con = vec![0.0; transform.constrained_dim()];
        let mut g_z = vec![0.0; n];
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.inv_n * self.global_grad[j];
        }
        let inv_m = 1.0 / self.theta.len() as f64;
        for (i, (zi, ti)) in self.z.iter().zip(&self.theta).enumerate() {
            self.model.grad_log_lik(ti, x, &mut g_con);
            g_z.iter_mut().for_each(|g| *g = 0.0);
            transform.add_vjp(zi, ti, &g_con, &mut g_z);
            let e = self.eps.row(i);
            for j in 0..n {
                out[j] += inv_m * g_z[j];
                out[n + j] += inv_m * g_z[j] * e[j] * self.dscale[j];
            }
        }
        if out.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("per-example gradient".into()));
        }
        Ok(())
    }

    pub fn grad(&self, x: &M::Obs) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 2 * self.dscale.len()];
        self.grad_into(x, &mut out)?;
        Ok(out)
    }
}

/// `ℓ(φ; x)` with `cfg.n_vi` fresh draws from `rng`.
pub fn per_example_loss<M: Model>(
    params: &VariationalParams,
    x: &M::Obs,
    model: &M,
    cfg: &ElboConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let eps = NoiseDraws::sample(rng, cfg.n_vi, params.dim());
    ElboEvaluator::new(model, params, &eps, cfg.dataset_size)?.loss(x)
}

/// `∇_φ ℓ(φ; x)` holding the draws fixed; consumes `rng` exactly like
/// [`per_example_loss`], so equal seeds give matching loss/gradient pairs.
pub fn per_example_grad<M: Model>(
    params: &VariationalParams,
    x: &M::Obs,
    model: &M,
    cfg: &ElboConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let eps = NoiseDraws::sample(rng, cfg.n_vi, params.dim());
    ElboEvaluator::new(model, params, &eps, cfg.dataset_size)?.grad(x)
}

/// Monte-Carlo ELBO over a whole dataset, computed directly from its
/// definition `mean_i [log p(D, U⁻¹θᵢ) + log|J| − log q(θᵢ)]`.
pub fn mc_elbo<M: Model>(model: &M, params: &VariationalParams, data: &[M::Obs], eps: &NoiseDraws) -> f64 {
    let s = params.scales();
    let n = params.dim();
    let t = model.transform();
    let mut total = 0.0;
    for i in 0..eps.len() {
        let e = eps.row(i);
        let z: Vec<f64> = (0..n).map(|j| params.mu[j] + s[j] * e[j]).collect();
        let theta = t.inverse(&z);
        total +=
            model.log_lik(&theta, data) + model.log_prior(&theta) + t.log_abs_det_jacobian_inverse(&z) - params.log_density(&z);
    }
    total / eps.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        make_beta_bernoulli, make_dirichlet_categorical, make_gamma_exponential, make_linear_regression_10d,
        make_logistic_regression, Diffeomorphism, Example,
    };
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn fd_check<M: Model>(model: &M, x: &M::Obs, seed: u64) {
        let mut rng = rng_from_seed(seed);
        let n = model.param_dim();
        let cfg = ElboConfig::new(10, 50).unwrap();
        for point in 0..20 {
            let mu = model.prior_sample_unconstrained(&mut rng);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..0.0)).collect();
            let p = VariationalParams::new(mu, u).unwrap();
            let draw_seed = 1000 + point;
            let g = per_example_grad(&p, x, model, &cfg, &mut rng_from_seed(draw_seed)).unwrap();
            let flat = p.to_flat();
            let h = 1e-5;
            for k in 0..2 * n {
                let mut fp = flat.clone();
                let mut fm = flat.clone();
                fp[k] += h;
                fm[k] -= h;
                let lp = per_example_loss(
                    &VariationalParams::from_flat(&fp).unwrap(),
                    x,
                    model,
                    &cfg,
                    &mut rng_from_seed(draw_seed),
                )
                .unwrap();
                let lm = per_example_loss(
                    &VariationalParams::from_flat(&fm).unwrap(),
                    x,
                    model,
                    &cfg,
                    &mut rng_from_seed(draw_seed),
                )
                .unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let err = (fd - g[k]).abs() / g[k].abs().max(1.0);
                assert!(
                    err < 1e-4,
                    "{} point {point} coord {k}: fd {fd} vs analytic {}",
                    model.name(),
                    g[k]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_every_model() {
        fd_check(&make_gamma_exponential(2.0, 2.0).unwrap(), &0.7, 1);
        fd_check(&make_beta_bernoulli(2.0, 2.0).unwrap(), &1u8, 2);
        fd_check(&make_dirichlet_categorical([1.0, 1.0, 1.0]).unwrap(), &2usize, 3);
        let x = Example {
            x: (0..10).map(|i| 0.1 * i as f64 - 0.4).collect(),
            y: 0.3,
        };
        fd_check(&make_linear_regression_10d(), &x, 4);
        let x = Example {
            x: vec![0.2, -1.0, 0.5],
            y: 1.0,
        };
        fd_check(&make_logistic_regression(3).unwrap(), &x, 5);
    }

    #[test]
    fn flat_round_trip() {
        let p = VariationalParams::new(vec![1.0, 2.0], vec![-1.0, 0.5]).unwrap();
        assert_eq!(VariationalParams::from_flat(&p.to_flat()).unwrap(), p);
        assert!(VariationalParams::from_flat(&[1.0, 2.0, 3.0]).is_err());
        assert!(ElboConfig::new(0, 3).is_err());
    }

    #[test]
    fn degenerate_scale_collapses_samples() {
        let p = VariationalParams::new(vec![0.3, -1.2], vec![-60.0, -60.0]).unwrap();
        let mut rng = rng_from_seed(5);
        for d in sample_variational(&p, &mut rng, 100) {
            assert!((d[0] - 0.3).abs() < 1e-12 && (d[1] + 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_moments() {
        let p = VariationalParams::new(vec![0.5, -2.0], vec![0.3, -1.0]).unwrap();
        let s = p.scales();
        let draws = sample_variational(&p, &mut rng_from_seed(6), 100_000);
        for j in 0..2 {
            let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let m = crate::math::mean(&col);
            let v = crate::math::variance(&col);
            assert!((m - p.mu[j]).abs() < 3.0 * s[j] / (1e5f64).sqrt());
            assert!((v / (s[j] * s[j]) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn decomposition_sums_to_elbo() {
        let m = make_gamma_exponential(2.0, 2.0).unwrap();
        let mut rng = rng_from_seed(7);
        let data = m.simulate(&mut rng, &[1.5], 40);
        let p = VariationalParams::new(vec![0.2], vec![-1.0]).unwrap();
        let eps = NoiseDraws::sample(&mut rng, 10, 1);
        let ev = ElboEvaluator::new(&m, &p, &eps, data.len()).unwrap();
        let total: f64 = data.iter().map(|x| ev.loss(x).unwrap()).sum();
        assert!((total - mc_elbo(&m, &p, &data, &eps)).abs() < 1e-10);
    }

    #[test]
    fn likelihood_term_with_point_mass() {
        let m = make_gamma_exponential(2.0, 2.0).unwrap();
        let mu = m.transform().forward(&[1.0]);
        let p = VariationalParams::new(mu, vec![-60.0]).unwrap();
        let eps = NoiseDraws::sample(&mut rng_from_seed(1), 10, 1);
        let ev = ElboEvaluator::new(&m, &p, &eps, usize::MAX).unwrap();
        // the global term is scaled away by the huge N; only log p(x=1|θ=1) remains
        assert!((ev.loss(&1.0).unwrap() + 1.0).abs() < 1e-9);
        // x = 1/θ is the single-observation MLE, so the likelihood score vanishes
        let g = ev.grad(&1.0).unwrap();
        assert!(g[0].abs() < 1e-9);
    }

    #[test]
    fn u_gradient_carries_softplus_derivative() {
        let m = make_gamma_exponential(2.0, 2.0).unwrap();
        let u = 0.4;
        let p = VariationalParams::new(vec![0.1], vec![u]).unwrap();
        // ε = 0 removes the pathwise part, leaving the entropy term σ(u)/s per unit N
        let eps = NoiseDraws::from_rows(&[vec![0.0]]);
        let ev = ElboEvaluator::new(&m, &p, &eps, 1).unwrap();
        let g = ev.grad(&0.5).unwrap();
        assert!((g[1] - sigmoid(u) / softplus(u)).abs() < 1e-12);
    }

    #[test]
    fn conjugate_parameters_beat_prior_parameters() {
        let m = make_gamma_exponential(2.0, 2.0).unwrap();
        let mut rng = rng_from_seed(8);
        let data = m.simulate(&mut rng, &[2.0], 100);
        let mut fit = |shape: f64, rate: f64| {
            // moment-match the log-normal in softplus space by sampling the gamma
            let g = rand_distr::Gamma::new(shape, 1.0 / rate).unwrap();
            let z: Vec<f64> = (0..20_000).map(|_| inv_softplus(g.sample(&mut rng))).collect();
            VariationalParams::new(
                vec![crate::math::mean(&z)],
                vec![inv_softplus(crate::math::variance(&z).sqrt())],
            )
            .unwrap()
        };
        let sum: f64 = data.iter().sum();
        let post = fit(2.0 + 100.0, 2.0 + sum);
        let prior = fit(2.0, 2.0);
        let eps = NoiseDraws::sample(&mut rng_from_seed(9), 100_000, 1);
        assert!(mc_elbo(&m, &post, &data, &eps) >= mc_elbo(&m, &prior, &data, &eps));
    }

    /// Gaussian mean with unit noise and a N(0, 1) prior, identity transform.
    struct GaussianMean(Diffeomorphism);

    impl Model for GaussianMean {
        type Obs = f64;
        fn name(&self) -> &'static str {
            "gaussian_mean"
        }
        fn transform(&self) -> &Diffeomorphism {
            &self.0
        }
        fn prior_sample(&self, rng: &mut Rng) -> Vec<f64> {
            vec![StandardNormal.sample(rng)]
        }
        fn simulate(&self, _: &mut Rng, theta: &[f64], n: usize) -> Vec<f64> {
            vec![theta[0]; n]
        }
        fn log_prior(&self, t: &[f64]) -> f64 {
            -0.5 * (t[0] * t[0] + LN_2PI)
        }
        fn grad_log_prior(&self, t: &[f64], g: &mut [f64]) {
            g[0] = -t[0];
        }
        fn per_example_log_lik(&self, t: &[f64], x: &f64) -> f64 {
            -0.5 * ((x - t[0]).powi(2) + LN_2PI)
        }
        fn grad_log_lik(&self, t: &[f64], x: &f64, g: &mut [f64]) {
            g[0] = x - t[0];
        }
    }

    #[test]
    fn gradient_vanishes_at_gaussian_optimum() {
        let m = GaussianMean(Diffeomorphism::identity(1));
        let data = [0.4, 1.3, -0.2, 0.9];
        let n = data.len() as f64;
        let post_var = 1.0 / (1.0 + n);
        let post_mean = data.iter().sum::<f64>() * post_var;
        let p = VariationalParams::new(vec![post_mean], vec![inv_softplus(post_var.sqrt())]).unwrap();
        // antithetic draws reproduce the first two moments of N(0, 1) exactly
        let eps = NoiseDraws::from_rows(&[vec![1.0], vec![-1.0]]);
        let ev = ElboEvaluator::new(&m, &p, &eps, data.len()).unwrap();
        let mut total = [0.0; 2];
        for x in &data {
            let g = ev.grad(x).unwrap();
            total[0] += g[0];
            total[1] += g[1];
        }
        assert!(total[0].abs() < 1e-6 && total[1].abs() < 1e-6, "{total:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let m = make_beta_bernoulli(2.0, 2.0).unwrap();
        let p = VariationalParams::new(vec![0.3], vec![-0.5]).unwrap();
        let cfg = ElboConfig::new(10, 20).unwrap();
        let a = per_example_grad(&p, &1, &m, &cfg, &mut rng_from_seed(3)).unwrap();
        let b = per_example_grad(&p, &1, &m, &cfg, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
    }
}
