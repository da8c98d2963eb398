//! Hamiltonian Monte Carlo with a fixed number of leapfrog steps, dual-averaging
//! step-size adaptation and a windowed diagonal mass matrix.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcOptions {
    pub warmup: usize,
    /// Post-warmup draws per chain.
    pub draws: usize,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
    pub chains: usize,
    pub seed: u64,
}

impl Default for HmcOptions {
    fn default() -> Self {
        Self {
            warmup: 1000,
            draws: 4000,
            leapfrog_steps: 32,
            target_accept: 0.8,
            chains: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HmcRun {
    pub draws: Vec<Vec<f64>>,
    /// Mean acceptance probability over post-warmup iterations.
    pub acceptance: f64,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub ess: Vec<f64>,
    pub divergences: usize,
}

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let eta = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        self.log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let w = self.t.powf(-KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Chain<'a, D: LogDensity + ?Sized> {
    target: &'a D,
    x: Vec<f64>,
    lp: f64,
    grad: Vec<f64>,
    inv_metric: Vec<f64>,
}

impl<D: LogDensity + ?Sized> Chain<'_, D> {
    /// One transition; returns the acceptance probability and whether the
    /// trajectory diverged.
    fn step(&mut self, eps: f64, steps: usize, rng: &mut Rng) -> (f64, bool) {
        let k = self.x.len();
        let p0: Vec<f64> = (0..k)
            .map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                z / self.inv_metric[j].sqrt()
            })
            .collect();
        let kinetic = |p: &[f64]| 0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>();
        let h0 = -self.lp + kinetic(&p0);
        let mut x = self.x.clone();
        let mut p = p0;
        let mut g = self.grad.clone();
        let mut lp = self.lp;
        for _ in 0..steps {
            for j in 0..k {
                p[j] += 0.5 * eps * g[j];
                x[j] += eps * self.inv_metric[j] * p[j];
            }
            lp = self.target.log_density_grad(&x, &mut g);
            if !lp.is_finite() {
                return (0.0, true);
            }
            for j in 0..k {
                p[j] += 0.5 * eps * g[j];
            }
        }
        let h1 = -lp + kinetic(&p);
        let diff = h0 - h1;
        if !diff.is_finite() || diff < -1000.0 {
            return (0.0, true);
        }
        let accept = diff.exp().min(1.0);
        if rng.random::<f64>() < accept {
            self.x = x;
            self.lp = lp;
            self.grad = g;
        }
        (accept, false)
    }
}

fn find_initial_step<D: LogDensity + ?Sized>(chain: &mut Chain<'_, D>, rng: &mut Rng) -> f64 {
    let saved = (chain.x.clone(), chain.lp, chain.grad.clone());
    let mut eps = 1.0;
    let restore = |c: &mut Chain<'_, D>| {
        c.x.clone_from(&saved.0);
        c.lp = saved.1;
        c.grad.clone_from(&saved.2);
    };
    let (a, _) = chain.step(eps, 1, rng);
    restore(chain);
    let dir = if a > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let (a, _) = chain.step(eps, 1, rng);
        restore(chain);
        if (dir > 0.0 && a <= 0.5) || (dir < 0.0 && a > 0.5) {
            break;
        }
        eps *= 2f64.powf(dir);
    }
    eps
}

/// Curvature-based starting metric: `1 / |∂²log p / ∂xⱼ²|` per coordinate.
fn initial_metric<D: LogDensity + ?Sized>(target: &D, x: &[f64]) -> Vec<f64> {
    let k = x.len();
    let mut gp = vec![0.0; k];
    let mut gm = vec![0.0; k];
    let mut xp = x.to_vec();
    (0..k)
        .map(|j| {
            let h = 1e-4 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            target.log_density_grad(&xp, &mut gp);
            xp[j] = x[j] - h;
            target.log_density_grad(&xp, &mut gm);
            xp[j] = x[j];
            let c = -(gp[j] - gm[j]) / (2.0 * h);
            if c.is_finite() && c > 0.0 {
                1.0 / c
            } else {
                1.0
            }
        })
        .collect()
}

/// Ends of the slow adaptation windows, each followed by a metric update.
fn window_ends(warmup: usize) -> Vec<usize> {
    let (init, term, base) = if warmup >= 150 {
        (75, 50, 25)
    } else {
        let init = warmup * 15 / 100;
        let term = warmup / 10;
        (init, term, (warmup - init - term).max(1))
    };
    let slow_end = warmup.saturating_sub(term);
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base;
    while start + size <= slow_end {
        let mut end = start + size;
        // merge a short final window into the previous one
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    ends
}

fn single_chain<D: LogDensity + ?Sized>(target: &D, init: &[f64], opts: &HmcOptions, seed: u64) -> Result<HmcRun> {
    let mut rng = rng_from_seed(seed);
    let k = target.dim();
    let mut grad = vec![0.0; k];
    let lp = target.log_density_grad(init, &mut grad);
    if !lp.is_finite() {
        return Err(Error::NonFinite("log density at the HMC starting point".into()));
    }
    let mut chain = Chain {
        target,
        x: init.to_vec(),
        lp,
        grad,
        inv_metric: initial_metric(target, init),
    };
    let mut eps = find_initial_step(&mut chain, &mut rng);
    let mut da = DualAveraging::new(eps, opts.target_accept);
    let ends = window_ends(opts.warmup);
    let mut window: Vec<Vec<f64>> = Vec::new();
    let mut next_end = 0;
    let init_buffer = if opts.warmup >= 150 { 75 } else { opts.warmup * 15 / 100 };
    for it in 0..opts.warmup {
        let (a, _) = chain.step(eps, opts.leapfrog_steps, &mut rng);
        eps = da.update(a);
        if it >= init_buffer && next_end < ends.len() {
            window.push(chain.x.clone());
            if it + 1 == ends[next_end] {
                let n = window.len() as f64;
                for j in 0..k {
                    let m = window.iter().map(|w| w[j]).sum::<f64>() / n;
                    let var = window.iter().map(|w| (w[j] - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                    let reg = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0)) * chain.inv_metric[j].min(var.max(1e-300));
                    if reg.is_finite() && reg > 0.0 {
                        chain.inv_metric[j] = reg;
                    }
                }
                window.clear();
                next_end += 1;
                eps = find_initial_step(&mut chain, &mut rng);
                da = DualAveraging::new(eps, opts.target_accept);
            }
        }
    }
    if opts.warmup > 0 {
        eps = da.final_step();
    }
    let mut draws = Vec::with_capacity(opts.draws);
    let mut accept_sum = 0.0;
    let mut divergences = 0;
    for _ in 0..opts.draws {
        let jittered = eps * rng.random_range(0.9..1.1);
        let (a, div) = chain.step(jittered, opts.leapfrog_steps, &mut rng);
        accept_sum += a;
        divergences += usize::from(div);
        draws.push(chain.x.clone());
    }
    let acceptance = accept_sum / opts.draws as f64;
    let ess = (0..k)
        .map(|j| effective_sample_size(&draws.iter().map(|d| d[j]).collect::<Vec<_>>()))
        .collect();
    Ok(HmcRun {
        draws,
        acceptance,
        step_size: eps,
        inv_metric: chain.inv_metric,
        ess,
        divergences,
    })
}

/// Runs `opts.chains` independent chains (in parallel) from `init` and pools
/// their post-warmup draws in chain order.
pub fn run_hmc<D: LogDensity + ?Sized>(target: &D, init: &[f64], opts: &HmcOptions) -> Result<HmcRun> {
    if opts.warmup == 0 || opts.draws == 0 || opts.leapfrog_steps == 0 || opts.chains == 0 {
        return Err(Error::InvalidArgument(
            "warmup, draws, leapfrog_steps and chains must be >= 1".into(),
        ));
    }
    if init.len() != target.dim() {
        return Err(Error::InvalidArgument(
            "init length does not match the target dimension".into(),
        ));
    }
    let runs: Vec<Result<HmcRun>> = (0..opts.chains)
        .into_par_iter()
        .map(|c| single_chain(target, init, opts, derive_seed(opts.seed, c as u64)))
        .collect();
    let mut runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let acceptance = runs.iter().map(|r| r.acceptance).sum::<f64>() / runs.len() as f64;
    if acceptance < 0.1 {
        return Err(Error::PathologicalAdaptation { acceptance });
    }
    if runs.len() == 1 {
        return Ok(runs.pop().expect("one chain"));
    }
    let k = target.dim();
    let divergences = runs.iter().map(|r| r.divergences).sum();
    let step_size = runs.iter().map(|r| r.step_size).sum::<f64>() / runs.len() as f64;
    let inv_metric = runs[0].inv_metric.clone();
    let ess = (0..k).map(|j| runs.iter().map(|r| r.ess[j]).sum()).collect();
    let draws = runs.into_iter().flat_map(|r| r.draws).collect();
    Ok(HmcRun {
        draws,
        acceptance,
        step_size,
        inv_metric,
        ess,
        divergences,
    })
}

/// Effective sample size via Geyer's initial monotone sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 { (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * c0) };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        lag += 2;
    }
    let tau = 2.0 * sum - 1.0;
    (n as f64 / tau.max(1e-12)).min(n as f64 * (n as f64).log10())
}
