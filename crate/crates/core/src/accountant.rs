//! Privacy accounting for T compositions of the Poisson-subsampled Gaussian
//! mechanism.
//!
//! The bound reported by [`epsilon_of`] is the smaller of two valid bounds:
//!
//! 1. Rényi-DP of the subsampled Gaussian on a fixed grid of orders, converted
//!    to `(ε, δ)` with the Balle et al. (2020) conversion.
//! 2. The exact privacy profile of the *unsubsampled* composition, which is a
//!    single Gaussian mechanism with multiplier `σ/√T` (analytic Gaussian
//!    mechanism of Balle & Wang 2018). Poisson subsampling never weakens a
//!    guarantee, so this bound holds for every `κ ≤ 1` and is tight at `κ = 1`.
//!
//! Both bounds are monotone in `σ`, `T` and `κ`, so their minimum is as well.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{LN_2, PI, SQRT_2};

use crate::error::{Error, Result};

/// Target `(ε, δ)` guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must be in (0,1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }
}

/// The mechanism being accounted: `steps` rounds, Poisson rate `sampling_rate`,
/// noise standard deviation `noise_multiplier · C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub steps: usize,
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
}

impl MechanismSpec {
    pub fn new(steps: usize, sampling_rate: f64, noise_multiplier: f64) -> Result<Self> {
        check_mechanism(noise_multiplier, steps, sampling_rate)?;
        Ok(Self {
            steps,
            sampling_rate,
            noise_multiplier,
        })
    }
}

fn check_mechanism(sigma: f64, steps: usize, kappa: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise multiplier must be > 0, got {sigma}")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidArgument(format!("sampling rate must be in (0,1], got {kappa}")));
    }
    Ok(())
}

/// Default Rényi orders: 1.25..10 in steps of 0.25, every integer up to 64,
/// then a sparse tail up to 1024 for the large-noise regime.
pub fn default_orders() -> Vec<f64> {
    let mut orders: Vec<f64> = (5..=40).map(|k| k as f64 * 0.25).collect();
    orders.extend((11..=64).map(|a| a as f64));
    orders.extend([80.0, 96.0, 128.0, 160.0, 192.0, 256.0, 320.0, 384.0, 512.0, 768.0, 1024.0]);
    orders
}

/// Bisection settings for [`RdpAccountant::calibrate_sigma`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rel_tol: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            sigma_min: 0.3,
            sigma_max: 1e4,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RdpAccountant {
    orders: Vec<f64>,
    /// Series terms are summed until they drop below `e^series_cutoff`.
    series_cutoff: f64,
    max_series_terms: usize,
    pub calibration: CalibrationOptions,
}

impl Default for RdpAccountant {
    fn default() -> Self {
        Self {
            orders: default_orders(),
            series_cutoff: -30.0,
            max_series_terms: 1_000_000,
            calibration: CalibrationOptions::default(),
        }
    }
}

impl RdpAccountant {
    pub fn with_orders(orders: Vec<f64>) -> Result<Self> {
        if orders.is_empty() || orders.iter().any(|&a| !(a > 1.0)) {
            return Err(Error::InvalidArgument("Rényi orders must all be > 1".into()));
        }
        Ok(Self {
            orders,
            ..Self::default()
        })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    /// RDP of one step at order `alpha`.
    pub fn rdp_step(&self, sigma: f64, kappa: f64, alpha: f64) -> Result<f64> {
        if kappa == 1.0 {
            return Ok(alpha / (2.0 * sigma * sigma));
        }
        let log_a = if alpha.fract() == 0.0 {
            log_a_int(kappa, sigma, alpha as u64)
        } else {
            self.log_a_frac(kappa, sigma, alpha)?
        };
        Ok(log_a / (alpha - 1.0))
    }

    /// ε from the Rényi bound alone (no analytic Gaussian cap).
    pub fn rdp_epsilon(&self, sigma: f64, delta: f64, steps: usize, kappa: f64) -> Result<f64> {
        let mut best = f64::INFINITY;
        for &alpha in &self.orders {
            let rdp = steps as f64 * self.rdp_step(sigma, kappa, alpha)?;
            let eps = rdp + ((alpha - 1.0) / alpha).ln() - (delta.ln() + alpha.ln()) / (alpha - 1.0);
            if eps.is_finite() && eps < best {
                best = eps;
            }
        }
        if !best.is_finite() {
            return Err(Error::NonConvergence("no Rényi order produced a finite epsilon".into()));
        }
        Ok(best.max(0.0))
    }

    /// Smallest ε such that `steps` rounds with multiplier `sigma` and rate
    /// `kappa` are `(ε, delta)`-DP under this accountant.
    pub fn epsilon_of(&self, sigma: f64, delta: f64, steps: usize, kappa: f64) -> Result<f64> {
        check_mechanism(sigma, steps, kappa)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must be in (0,1), got {delta}")));
        }
        let gaussian = analytic_gaussian_epsilon(sigma / (steps as f64).sqrt(), delta)?;
        let rdp = self.rdp_epsilon(sigma, delta, steps, kappa)?;
        Ok(rdp.min(gaussian))
    }

    pub fn epsilon_for(&self, mech: &MechanismSpec, delta: f64) -> Result<f64> {
        self.epsilon_of(mech.noise_multiplier, delta, mech.steps, mech.sampling_rate)
    }

    /// Smallest σ (to relative tolerance) whose ε does not exceed the budget.
    /// The returned σ always satisfies the budget.
    pub fn calibrate_sigma(&self, budget: PrivacyBudget, steps: usize, kappa: f64) -> Result<f64> {
        let PrivacyBudget { epsilon, delta } = PrivacyBudget::new(budget.epsilon, budget.delta)?;
        let opts = self.calibration;
        let eps_at = |s: f64| self.epsilon_of(s, delta, steps, kappa);
        let eps_max = eps_at(opts.sigma_max)?;
        if eps_max > epsilon {
            return Err(Error::Infeasible {
                epsilon,
                sigma_min: opts.sigma_min,
                sigma_max: opts.sigma_max,
                epsilon_at_max: eps_max,
            });
        }
        if eps_at(opts.sigma_min)? <= epsilon {
            return Ok(opts.sigma_min);
        }
        let (mut lo, mut hi) = (opts.sigma_min, opts.sigma_max);
        while hi / lo > 1.0 + opts.rel_tol {
            let mid = (lo * hi).sqrt();
            if eps_at(mid)? <= epsilon {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    fn log_a_frac(&self, q: f64, sigma: f64, alpha: f64) -> Result<f64> {
        let mut log_a0 = f64::NEG_INFINITY;
        let mut log_a1 = f64::NEG_INFINITY;
        let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
        let (log_q, log_1q) = (q.ln(), (-q).ln_1p());
        let two_s2 = 2.0 * sigma * sigma;
        // binomial(alpha, i) tracked as sign and log-magnitude
        let mut log_coef = 0.0;
        let mut positive = true;
        for i in 0..self.max_series_terms {
            let fi = i as f64;
            let j = alpha - fi;
            let log_t0 = log_coef + fi * log_q + j * log_1q;
            let log_t1 = log_coef + j * log_q + fi * log_1q;
            let log_e0 = -LN_2 + log_erfc((fi - z0) / (SQRT_2 * sigma));
            let log_e1 = -LN_2 + log_erfc((z0 - j) / (SQRT_2 * sigma));
            let log_s0 = log_t0 + (fi * fi - fi) / two_s2 + log_e0;
            let log_s1 = log_t1 + (j * j - j) / two_s2 + log_e1;
            if positive {
                log_a0 = log_add(log_a0, log_s0);
                log_a1 = log_add(log_a1, log_s1);
            } else {
                log_a0 = log_sub(log_a0, log_s0)?;
                log_a1 = log_sub(log_a1, log_s1)?;
            }
            if log_s0.max(log_s1) < self.series_cutoff {
                return Ok(log_add(log_a0, log_a1));
            }
            let ratio = (alpha - fi) / (fi + 1.0);
            if ratio == 0.0 {
                return Ok(log_add(log_a0, log_a1));
            }
            if ratio < 0.0 {
                positive = !positive;
            }
            log_coef += ratio.abs().ln();
        }
        Err(Error::NonConvergence(format!(
            "fractional-order series for alpha={alpha}, sigma={sigma}, q={q} did not settle within {} terms",
            self.max_series_terms
        )))
    }
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let (log_q, log_1q) = (q.ln(), (-q).ln_1p());
    let two_s2 = 2.0 * sigma * sigma;
    let a = alpha as f64;
    let mut log_a = f64::NEG_INFINITY;
    let mut log_binom = 0.0;
    for i in 0..=alpha {
        let fi = i as f64;
        let s = log_binom + fi * log_q + (a - fi) * log_1q + (fi * fi - fi) / two_s2;
        log_a = log_add(log_a, s);
        log_binom += ((a - fi) / (fi + 1.0)).ln();
    }
    log_a
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_sub(a: f64, b: f64) -> Result<f64> {
    if b == f64::NEG_INFINITY {
        return Ok(a);
    }
    if b >= a {
        return Err(Error::NonConvergence(
            "alternating series lost precision (log-subtraction of a larger term)".into(),
        ));
    }
    Ok(a + (-(b - a).exp()).ln_1p())
}

/// `ln erfc(x)` valid far into the upper tail.
pub(crate) fn log_erfc(x: f64) -> f64 {
    if x < 25.0 {
        erfc(x).ln()
    } else {
        // asymptotic expansion of erfc for large x
        let x2 = x * x;
        let inv = 1.0 / (2.0 * x2);
        let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv * inv * inv + 105.0 * inv.powi(4);
        -x2 - x.ln() - 0.5 * PI.ln() + series.ln()
    }
}

/// `ln Φ(x)` for the standard normal CDF.
fn log_ndtr(x: f64) -> f64 {
    -LN_2 + log_erfc(-x / SQRT_2)
}

/// δ(ε) of the Gaussian mechanism with noise multiplier `sigma` (unit
/// sensitivity).
pub fn analytic_gaussian_delta(sigma: f64, epsilon: f64) -> f64 {
    let a = -epsilon * sigma + 1.0 / (2.0 * sigma);
    let b = -epsilon * sigma - 1.0 / (2.0 * sigma);
    let first = log_ndtr(a);
    let second = epsilon + log_ndtr(b);
    if second >= first {
        return 0.0;
    }
    first.exp() * (-(second - first).exp()).ln_1p().exp()
}

/// Exact ε of a single Gaussian mechanism at the given δ.
pub fn analytic_gaussian_epsilon(sigma: f64, delta: f64) -> Result<f64> {
    if analytic_gaussian_delta(sigma, 0.0) <= delta {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while analytic_gaussian_delta(sigma, hi) > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NonConvergence(format!(
                "analytic Gaussian epsilon unbounded for sigma={sigma}"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if analytic_gaussian_delta(sigma, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1e-12) {
            break;
        }
    }
    Ok(hi)
}

/// [`RdpAccountant::epsilon_of`] with the default accountant.
pub fn epsilon_of(sigma: f64, delta: f64, steps: usize, kappa: f64) -> Result<f64> {
    RdpAccountant::default().epsilon_of(sigma, delta, steps, kappa)
}

/// [`RdpAccountant::calibrate_sigma`] with the default accountant.
pub fn calibrate_sigma(budget: PrivacyBudget, steps: usize, kappa: f64) -> Result<f64> {
    RdpAccountant::default().calibrate_sigma(budget, steps, kappa)
}
