#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nadpvi::evaluation::PosteriorSampler;
use nadpvi::math::softplus;
use nadpvi::models::{ConjugatePosterior, Diffeomorphism};
use nadpvi::postprocess::{fit_hmc, HmcOptions, PostProcessModel, TracePriors};
use nadpvi::rng::{rng_from_seed, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Every file under `root` keyed by relative path, `timings.json` excluded.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "timings.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// First differing file between two snapshots, if any.
pub fn first_difference(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) -> Option<String> {
    if a.keys().ne(b.keys()) {
        return Some(format!(
            "file sets differ: {:?} vs {:?}",
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>()
        ));
    }
    a.iter()
        .find(|(k, v)| b[*k] != **v)
        .map(|(k, _)| format!("{} differs", k.display()))
}

/// Exact conjugate posterior pushed into the unconstrained space.
pub struct Exact {
    pub post: ConjugatePosterior,
    pub transform: Diffeomorphism,
}

impl PosteriorSampler for Exact {
    fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        self.transform.forward(&self.post.sample(rng))
    }
}

pub fn within_binomial(cov: &[f64], alpha: &[f64], k: usize) -> Result<(), String> {
    for (c, a) in cov.iter().zip(alpha) {
        let tol = 3.0 * (a * (1.0 - a) / k as f64).sqrt();
        if (c - (1.0 - a)).abs() >= tol {
            return Err(format!("alpha {a}: coverage {c}, tolerance {tol}"));
        }
    }
    Ok(())
}

pub struct Synthetic {
    pub phi: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
}

/// Noisy-SGD trace whose gradients follow the post-processing model exactly.
pub fn synthetic_trace(phi_star: &[f64], a: &[f64], kappa: f64, nu: f64, lr: f64, n: usize, seed: u64) -> Synthetic {
    let mut rng = rng_from_seed(seed);
    let mut cur: Vec<f64> = phi_star.iter().map(|p| p + 0.3).collect();
    let mut phi = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for _ in 0..n {
        let g: Vec<f64> = (0..cur.len())
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                kappa * a[i] * (cur[i] - phi_star[i]) + nu.sqrt() * e
            })
            .collect();
        phi.push(cur.clone());
        for (c, gi) in cur.iter_mut().zip(&g) {
            *c -= lr * gi;
        }
        grads.push(g);
    }
    Synthetic { phi, grads }
}

pub fn model(s: &Synthetic, priors: TracePriors, kappa: f64, sigma: f64) -> PostProcessModel {
    let d = s.phi[0].len();
    PostProcessModel::from_parts(&s.phi, &s.grads, kappa, sigma, 1.0, vec![1.0; d], priors).unwrap()
}

/// Simulation-based calibration: draw (φ*, v) from the prior, simulate a
/// trace from the gradient model, and rank the truth among thinned HMC draws.
pub fn sbc_p_values(replications: usize, seed: u64) -> Vec<f64> {
    const THIN: usize = 9;
    let (kappa, sigma) = (0.1, 2.0);
    let priors = TracePriors {
        phi_star_mean: vec![0.0, 1.0],
        v_mean: vec![50.0, 80.0],
        v_sd: vec![10.0, 15.0],
    };
    let mut ranks = vec![vec![0usize; THIN + 1]; 4];
    let mut rng = rng_from_seed(seed);
    for r in 0..replications {
        let mut truth = Vec::new();
        for i in 0..2 {
            let e: f64 = StandardNormal.sample(&mut rng);
            truth.push(priors.phi_star_mean[i] + e);
        }
        for i in 0..2 {
            let e: f64 = StandardNormal.sample(&mut rng);
            truth.push(priors.v_mean[i] + priors.v_sd[i] * e);
        }
        let a: Vec<f64> = truth[2..].iter().map(|v| softplus(*v)).collect();
        let s = synthetic_trace(&truth[..2], &a, kappa, sigma * sigma, 0.05, 200, rng.random());
        let m = model(&s, priors.clone(), kappa, sigma);
        let run = fit_hmc(
            &m,
            &HmcOptions {
                warmup: 400,
                draws: 900,
                seed: rng.random(),
                ..Default::default()
            },
        )
        .unwrap_or_else(|e| panic!("replication {r}: {e}"));
        for (j, bins) in ranks.iter_mut().enumerate() {
            let rank = run.draws.iter().step_by(100).take(THIN).filter(|d| d[j] < truth[j]).count();
            bins[rank] += 1;
        }
    }
    let chi = ChiSquared::new(THIN as f64).unwrap();
    ranks
        .iter()
        .map(|bins| {
            let e = replications as f64 / (THIN + 1) as f64;
            let stat: f64 = bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
            1.0 - chi.cdf(stat)
        })
        .collect()
}

/// δ(ε) of N(0,σ²) vs N(1,σ²) by direct quadrature of ∫ (p − e^ε q)₊.
pub fn delta_by_quadrature(sigma: f64, eps: f64) -> f64 {
    let p = |x: f64| (-(x * x) / (2.0 * sigma * sigma)).exp();
    let q = |x: f64| (-((x - 1.0) * (x - 1.0)) / (2.0 * sigma * sigma)).exp();
    let (lo, hi) = (-12.0 * sigma - 1.0, 12.0 * sigma + 2.0);
    let n = 400_000;
    let h = (hi - lo) / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        s += w * (p(x) - eps.exp() * q(x)).max(0.0);
    }
    s * h / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn eps_by_quadrature(sigma: f64, delta: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if delta_by_quadrature(sigma, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
