//! Bayesian post-processing of a DP-SGD trace.
//!
//! After burn-in the noisy gradients are modelled as
//!
//! ```text
//! g̃_{t+1} | φ_t, A, φ* ~ N(κ A (φ_t − φ*), diag((σ²C² + Σ_sub) / β²))
//! ```
//!
//! with `A = diag(softplus(v))`. The posterior over `φ*` turns into a mixture of
//! variational Gaussians, the noise-aware posterior.

mod hmc;
mod laplace;

pub use hmc::{effective_sample_size, run_hmc, HmcOptions, HmcRun};
pub use laplace::{laplace_fit, LaplaceFit, LaplaceOptions};

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dpsgd::DpSgdTrace;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus, LN_2PI};
use crate::models::LogisticRegression;
use crate::rng::{rng_from_seed, Rng};
use crate::vi::VariationalParams;

/// A differentiable log density on `ℝᵏ`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(x)` and writes `∇ log p(x)` into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(x, &mut g)
    }
}

/// Centered sufficient statistics of one trace coordinate over `t ∈ [T*, T−1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct CoordStats {
    count: f64,
    phi_bar: f64,
    /// `Σ (φ_t − φ̄)²`
    s_pp: f64,
    /// `Σ g̃_{t+1} (φ_t − φ̄)`
    s_gp: f64,
    /// `Σ g̃_{t+1}`
    s_g: f64,
    /// `Σ g̃²_{t+1}`
    s_gg: f64,
}

impl CoordStats {
    fn new(phi: &[f64], g: &[f64]) -> Self {
        let count = phi.len() as f64;
        let phi_bar = phi.iter().sum::<f64>() / count;
        let mut s = Self {
            count,
            phi_bar,
            s_pp: 0.0,
            s_gp: 0.0,
            s_g: 0.0,
            s_gg: 0.0,
        };
        for (p, gv) in phi.iter().zip(g) {
            let c = p - phi_bar;
            s.s_pp += c * c;
            s.s_gp += gv * c;
            s.s_g += gv;
            s.s_gg += gv * gv;
        }
        s
    }
}

/// Gaussian priors over `φ*` (covariance `I`) and each `vᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePriors {
    pub phi_star_mean: Vec<f64>,
    pub v_mean: Vec<f64>,
    pub v_sd: Vec<f64>,
}

/// Prior of one `vᵢ` from centered iterates `φ_t − φ̄` and the matching `g̃_{t+1}`.
pub fn v_prior_coordinate(
    centered_phi: &[f64],
    grads: &[f64],
    kappa: f64,
    sigma_dp: f64,
    clip_norm: f64,
    beta: f64,
) -> Option<(f64, f64)> {
    let spread: f64 = centered_phi.iter().map(|c| c * c).sum();
    if !(spread > 0.0) {
        return None;
    }
    let cross: f64 = centered_phi.iter().zip(grads).map(|(c, g)| c * g).sum();
    let mean = cross.abs() / (kappa * spread);
    let sd = sigma_dp * sigma_dp * clip_norm * clip_norm / (kappa * kappa * beta * beta * spread);
    Some((mean, sd))
}

/// Trace-derived priors using the iterates `φ_t`, `t ∈ [T*, T−1]`.
pub fn trace_priors(trace: &DpSgdTrace, burn_in: usize) -> Result<TracePriors> {
    check_burn_in(trace, burn_in)?;
    let c = &trace.config;
    let d = trace.dim();
    let mut priors = TracePriors {
        phi_star_mean: Vec::with_capacity(d),
        v_mean: Vec::with_capacity(d),
        v_sd: Vec::with_capacity(d),
    };
    let rows = burn_in..trace.steps();
    for i in 0..d {
        let phi: Vec<f64> = rows.clone().map(|t| trace.params[t][i]).collect();
        let g: Vec<f64> = rows.clone().map(|t| trace.noisy_grads[t][i]).collect();
        let bar = phi.iter().sum::<f64>() / phi.len() as f64;
        let centered: Vec<f64> = phi.iter().map(|p| p - bar).collect();
        let (m, s) = v_prior_coordinate(
            &centered,
            &g,
            c.sampling_rate,
            c.noise_multiplier,
            c.clip_norm,
            c.precondition[i],
        )
        .ok_or(Error::DegenerateTrace { coordinate: i })?;
        priors.phi_star_mean.push(bar);
        priors.v_mean.push(m);
        priors.v_sd.push(s);
    }
    Ok(priors)
}

fn check_burn_in(trace: &DpSgdTrace, burn_in: usize) -> Result<()> {
    if burn_in >= trace.steps() {
        return Err(Error::InvalidArgument(format!(
            "burn-in {burn_in} must be smaller than the trace length {}",
            trace.steps()
        )));
    }
    Ok(())
}

/// How the subsampling covariance `Σ_sub` enters the noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SigmaSub {
    /// `Σ_sub = diag(values)`; all zeros by default.
    Fixed(Vec<f64>),
    /// Experimental: `Σ_sub,i = τᵢ²` with `τᵢ = softplus(wᵢ)` and a half-normal
    /// prior of scale `σ_DP·C` on `τᵢ`; `w` is appended to the parameter vector.
    Estimated,
}

/// The post-processing model over `x = (φ*, v)` (plus `w` when `Σ_sub` is estimated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostProcessModel {
    pub burn_in: usize,
    pub kappa: f64,
    pub sigma_dp: f64,
    pub clip_norm: f64,
    pub beta: Vec<f64>,
    pub priors: TracePriors,
    pub sigma_sub: SigmaSub,
    stats: Vec<CoordStats>,
}

impl PostProcessModel {
    /// Uses `t ∈ [burn_in, T−1]` and the trace-derived priors.
    pub fn from_trace(trace: &DpSgdTrace, burn_in: usize) -> Result<Self> {
        let priors = trace_priors(trace, burn_in)?;
        let c = &trace.config;
        let rows = burn_in..trace.steps();
        let phi: Vec<Vec<f64>> = rows.clone().map(|t| trace.params[t].clone()).collect();
        let g: Vec<Vec<f64>> = rows.map(|t| trace.noisy_grads[t].clone()).collect();
        Self::from_parts(
            &phi,
            &g,
            c.sampling_rate,
            c.noise_multiplier,
            c.clip_norm,
            c.precondition.clone(),
            priors,
        )
        .map(|m| Self { burn_in, ..m })
    }

    /// Builds the model from aligned pairs `(φ_t, g̃_{t+1})` and explicit priors.
    pub fn from_parts(
        phi: &[Vec<f64>],
        grads: &[Vec<f64>],
        kappa: f64,
        sigma_dp: f64,
        clip_norm: f64,
        beta: Vec<f64>,
        priors: TracePriors,
    ) -> Result<Self> {
        if phi.is_empty() || phi.len() != grads.len() {
            return Err(Error::InvalidArgument("need equally many iterates and gradients".into()));
        }
        let d = beta.len();
        if priors.phi_star_mean.len() != d || priors.v_mean.len() != d || priors.v_sd.len() != d {
            return Err(Error::InvalidArgument("prior dimensions do not match beta".into()));
        }
        if priors.v_sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(
                "every v prior scale must be positive and finite".into(),
            ));
        }
        let stats = (0..d)
            .map(|i| {
                let p: Vec<f64> = phi.iter().map(|r| r[i]).collect();
                let g: Vec<f64> = grads.iter().map(|r| r[i]).collect();
                CoordStats::new(&p, &g)
            })
            .collect();
        Ok(Self {
            burn_in: 0,
            kappa,
            sigma_dp,
            clip_norm,
            beta,
            priors,
            sigma_sub: SigmaSub::Fixed(vec![0.0; d]),
            stats,
        })
    }

    pub fn with_sigma_sub(mut self, sigma_sub: SigmaSub) -> Result<Self> {
        if let SigmaSub::Fixed(v) = &sigma_sub {
            if v.len() != self.d() || v.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::InvalidArgument("fixed sigma_sub must be d non-negative values".into()));
            }
        }
        self.sigma_sub = sigma_sub;
        Ok(self)
    }

    /// Dimension `d` of `φ`.
    pub fn d(&self) -> usize {
        self.beta.len()
    }

    /// Number of `(φ_t, g̃_{t+1})` pairs used.
    pub fn pairs(&self) -> usize {
        self.stats[0].count as usize
    }

    /// Length of the sampled parameter vector.
    pub fn param_len(&self) -> usize {
        match self.sigma_sub {
            SigmaSub::Fixed(_) => 2 * self.d(),
            SigmaSub::Estimated => 3 * self.d(),
        }
    }

    /// Starting point `(prior mean of φ*, prior mean of v, w = 0)`.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut x = self.priors.phi_star_mean.clone();
        x.extend_from_slice(&self.priors.v_mean);
        if matches!(self.sigma_sub, SigmaSub::Estimated) {
            x.extend(std::iter::repeat_n(0.0, self.d()));
        }
        x
    }

    fn base_variance(&self) -> f64 {
        (self.sigma_dp * self.clip_norm).powi(2)
    }

    /// Per-coordinate log likelihood and its partial derivatives with respect
    /// to `φ*ᵢ`, `a = softplus(vᵢ)` and the noise variance `ν`.
    fn coordinate(&self, i: usize, phi_star: f64, a: f64, nu: f64) -> (f64, f64, f64, f64) {
        let s = &self.stats[i];
        let k = self.kappa;
        let delta = s.phi_bar - phi_star;
        let q = s.s_gg - 2.0 * k * a * (s.s_gp + delta * s.s_g) + k * k * a * a * (s.s_pp + s.count * delta * delta);
        let ll = -0.5 * q / nu - 0.5 * s.count * (LN_2PI + nu.ln());
        let dq_ddelta = -2.0 * k * a * s.s_g + 2.0 * k * k * a * a * s.count * delta;
        let dq_da = -2.0 * k * (s.s_gp + delta * s.s_g) + 2.0 * k * k * a * (s.s_pp + s.count * delta * delta);
        let d_phi = 0.5 * dq_ddelta / nu;
        let d_a = -0.5 * dq_da / nu;
        let d_nu = 0.5 * q / (nu * nu) - 0.5 * s.count / nu;
        (ll, d_phi, d_a, d_nu)
    }
}

impl LogDensity for PostProcessModel {
    fn dim(&self) -> usize {
        self.param_len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.d();
        let p = &self.priors;
        let mut lp = 0.0;
        for i in 0..d {
            let phi_star = x[i];
            let v = x[d + i];
            let a = softplus(v);
            let b2 = self.beta[i] * self.beta[i];
            let (nu, w_parts) = match &self.sigma_sub {
                SigmaSub::Fixed(sub) => ((self.base_variance() + sub[i]) / b2, None),
                SigmaSub::Estimated => {
                    let w = x[2 * d + i];
                    let tau = softplus(w);
                    ((self.base_variance() + tau * tau) / b2, Some((w, tau)))
                }
            };
            let (ll, d_phi, d_a, d_nu) = self.coordinate(i, phi_star, a, nu);

            let zp = phi_star - p.phi_star_mean[i];
            let zv = (v - p.v_mean[i]) / p.v_sd[i];
            lp += ll - 0.5 * (zp * zp + LN_2PI) - 0.5 * (zv * zv + LN_2PI) - p.v_sd[i].ln();
            grad[i] = d_phi - zp;
            grad[d + i] = d_a * sigmoid(v) - zv / p.v_sd[i];

            if let Some((w, tau)) = w_parts {
                let scale = self.sigma_dp * self.clip_norm;
                // half-normal on τ plus the softplus Jacobian
                lp += -0.5 * (tau / scale).powi(2) + (2.0 / std::f64::consts::PI).sqrt().ln() - scale.ln()
                    + crate::math::log_sigmoid(w);
                let dtau_dw = sigmoid(w);
                grad[2 * d + i] = d_nu * 2.0 * tau * dtau_dw / b2 - tau / (scale * scale) * dtau_dw + sigmoid(-w);
            }
        }
        lp
    }
}

/// `log_posterior_density(φ*, v)` with `Σ_sub` fixed.
pub fn log_posterior_density(phi_star: &[f64], v: &[f64], model: &PostProcessModel) -> f64 {
    let mut x = phi_star.to_vec();
    x.extend_from_slice(v);
    if matches!(model.sigma_sub, SigmaSub::Estimated) {
        x.extend(std::iter::repeat_n(0.0, model.d()));
    }
    model.log_density(&x)
}

/// The model with `v` held fixed, a Gaussian density over `φ*` alone.
pub struct FixedV<'a> {
    model: &'a PostProcessModel,
    v: Vec<f64>,
}

impl<'a> FixedV<'a> {
    pub fn new(model: &'a PostProcessModel, v: Vec<f64>) -> Result<Self> {
        if v.len() != model.d() || !matches!(model.sigma_sub, SigmaSub::Fixed(_)) {
            return Err(Error::InvalidArgument(
                "fixed-v restriction needs d values and fixed sigma_sub".into(),
            ));
        }
        Ok(Self { model, v })
    }
}

impl LogDensity for FixedV<'_> {
    fn dim(&self) -> usize {
        self.model.d()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.model.d();
        let mut full = x.to_vec();
        full.extend_from_slice(&self.v);
        let mut g = vec![0.0; 2 * d];
        let lp = self.model.log_density_grad(&full, &mut g);
        grad.copy_from_slice(&g[..d]);
        lp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hmc,
    Laplace,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Hmc => "hmc",
            Method::Laplace => "laplace",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acceptance: Option<f64>,
    pub step_size: Option<f64>,
    pub ess: Option<Vec<f64>>,
    pub map_grad_norm: Option<f64>,
    pub map_iterations: Option<usize>,
}

/// Draws of `(φ*, v[, w])` from the post-processing posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub draws: Vec<Vec<f64>>,
    /// Dimension `d` of `φ*`.
    pub d: usize,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn phi_star(&self, i: usize) -> &[f64] {
        &self.draws[i][..self.d]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.draws[i][self.d..2 * self.d]
    }

    /// CSV `draw,phi_star_*,v_*` preceded by `# key=value` metadata lines.
    pub fn to_csv(&self, metadata: &[(&str, String)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# method={}", self.method);
        for (k, v) in metadata {
            let _ = writeln!(s, "# {k}={v}");
        }
        let cols: Vec<String> = (0..self.d)
            .map(|i| format!("phi_star_{i}"))
            .chain((0..self.d).map(|i| format!("v_{i}")))
            .collect();
        let _ = writeln!(s, "draw,{}", cols.join(","));
        for (k, row) in self.draws.iter().enumerate() {
            let _ = write!(s, "{k}");
            for v in &row[..2 * self.d] {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, metadata: &[(&str, String)]) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(metadata)).map_err(|e| Error::io(path, e))
    }
}

/// Laplace approximation of the post-processing posterior and `draws` Gaussian samples from it.
pub fn fit_laplace(model: &PostProcessModel, opts: &LaplaceOptions, draws: usize, seed: u64) -> Result<PosteriorSamples> {
    if draws == 0 {
        return Err(Error::InvalidArgument("at least one posterior draw is required".into()));
    }
    let fit = laplace_fit(model, &model.initial_point(), opts)?;
    let mut rng = rng_from_seed(seed);
    let samples = fit.sample(&mut rng, draws);
    Ok(PosteriorSamples {
        draws: samples,
        d: model.d(),
        method: Method::Laplace,
        diagnostics: Diagnostics {
            map_grad_norm: Some(fit.grad_norm),
            map_iterations: Some(fit.iterations),
            ..Default::default()
        },
    })
}

/// HMC over `(φ*, v)` from the prior-mean starting point.
pub fn fit_hmc(model: &PostProcessModel, opts: &HmcOptions) -> Result<PosteriorSamples> {
    let run = run_hmc(model, &model.initial_point(), opts)?;
    Ok(PosteriorSamples {
        d: model.d(),
        method: Method::Hmc,
        diagnostics: Diagnostics {
            acceptance: Some(run.acceptance),
            step_size: Some(run.step_size),
            ess: Some(run.ess.clone()),
            ..Default::default()
        },
        draws: run.draws,
    })
}

/// Equal-weight mixture of diagonal Gaussians over the unconstrained `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAwarePosterior {
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
}

impl NoiseAwarePosterior {
    /// The single variational Gaussian `q(θ; φ)`; used by the last-iterate baseline.
    pub fn single(params: &VariationalParams) -> Self {
        Self {
            means: vec![params.mu.clone()],
            scales: vec![params.scales()],
        }
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .means
            .iter()
            .zip(&self.scales)
            .map(|(m, s)| {
                m.iter()
                    .zip(s)
                    .zip(theta)
                    .map(|((m, s), t)| crate::math::normal_log_pdf(*t, *m, *s))
                    .sum()
            })
            .collect();
        crate::math::log_sum_exp(&logs) - (self.components() as f64).ln()
    }

    pub fn mean(&self) -> Vec<f64> {
        let k = self.components() as f64;
        (0..self.dim())
            .map(|j| self.means.iter().map(|m| m[j]).sum::<f64>() / k)
            .collect()
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        let c = rng.random_range(0..self.components());
        self.means[c]
            .iter()
            .zip(&self.scales[c])
            .map(|(m, s)| {
                let e: f64 = StandardNormal.sample(rng);
                m + s * e
            })
            .collect()
    }
}

/// Drops `v` and turns each `φ*ᵢ = (μᵢ, uᵢ)` into one mixture component.
pub fn mixture_posterior(samples: &PosteriorSamples) -> Result<NoiseAwarePosterior> {
    if samples.is_empty() || !samples.d.is_multiple_of(2) {
        return Err(Error::InvalidArgument("need at least one draw of an even-length phi*".into()));
    }
    let n = samples.d / 2;
    let mut means = Vec::with_capacity(samples.len());
    let mut scales = Vec::with_capacity(samples.len());
    for i in 0..samples.len() {
        let phi = samples.phi_star(i);
        means.push(phi[..n].to_vec());
        scales.push(phi[n..].iter().map(|&u| softplus(u)).collect());
    }
    Ok(NoiseAwarePosterior { means, scales })
}

/// Ancestral sampling: a uniformly chosen component, then a Gaussian draw.
pub fn sample_posterior(post: &NoiseAwarePosterior, rng: &mut Rng, m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| post.sample_one(rng)).collect()
}

/// Monte-Carlo estimate of `p(y = 1 | x)` under the mixture.
pub fn posterior_predictive_logistic(
    post: &NoiseAwarePosterior,
    model: &LogisticRegression,
    x: &[f64],
    rng: &mut Rng,
    m: usize,
) -> f64 {
    let total: f64 = (0..m).map(|_| model.predict_proba(&post.sample_one(rng), x)).sum();
    total / m as f64
}
