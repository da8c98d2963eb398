//! DP-SGD over the per-example ELBO with Poisson subsampling, per-coordinate
//! preconditioning and a recorded trace of iterates and noisy gradients.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{inv_softplus, norm2};
use crate::models::Model;
use crate::rng::rng_from_seed;
use crate::vi::{ElboConfig, ElboEvaluator, NoiseDraws, VariationalParams};

/// Rescales `g` in place so that `‖g‖₂ ≤ c`.
pub fn clip_in_place(g: &mut [f64], c: f64) {
    let norm = norm2(g);
    if norm > c {
        let f = c / norm;
        g.iter_mut().for_each(|v| *v *= f);
    }
}

/// `g · min(1, C / ‖g‖₂)`.
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c);
    out
}

/// `√2·λ_c / (σ·C·√(T·d))`.
pub fn lr_heuristic(lambda_c: f64, sigma: f64, clip_norm: f64, steps: usize, dim: usize) -> f64 {
    std::f64::consts::SQRT_2 * lambda_c / (sigma * clip_norm * ((steps * dim) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub clip_norm: f64,
    pub sampling_rate: f64,
    pub steps: usize,
    pub noise_multiplier: f64,
    /// Per-coordinate `β` over the flat `[μ, u]` layout.
    pub precondition: Vec<f64>,
    pub lr_scale: f64,
    pub init: Vec<f64>,
    pub seed: u64,
}

impl DpSgdConfig {
    /// Defaults for `n` model parameters: `β = (1…1, β_u…β_u)`, `μ₀ = 0`,
    /// unit initial scales, `λ_c = 1`.
    pub fn with_defaults(
        n: usize,
        clip_norm: f64,
        sampling_rate: f64,
        steps: usize,
        noise_multiplier: f64,
        beta_u: f64,
        seed: u64,
    ) -> Self {
        Self {
            clip_norm,
            sampling_rate,
            steps,
            noise_multiplier,
            precondition: precondition_vector(n, beta_u),
            lr_scale: 1.0,
            init: default_init(n),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.init.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad("clip_norm must be positive");
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return bad("sampling_rate must lie in (0, 1]");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if !(self.noise_multiplier > 0.0 && self.noise_multiplier.is_finite()) {
            return bad("noise_multiplier must be positive");
        }
        if !(self.lr_scale > 0.0) {
            return bad("lr_scale must be positive");
        }
        if self.init.is_empty() || !self.init.len().is_multiple_of(2) {
            return bad("init must have even nonzero length 2n");
        }
        if self.precondition.len() != self.init.len() || self.precondition.iter().any(|b| !(*b > 0.0)) {
            return bad("precondition must have length d and positive entries");
        }
        Ok(())
    }

    /// `λ = lr_heuristic · β`.
    pub fn effective_lr(&self) -> Vec<f64> {
        let base = lr_heuristic(self.lr_scale, self.noise_multiplier, self.clip_norm, self.steps, self.dim());
        self.precondition.iter().map(|b| base * b).collect()
    }
}

pub fn precondition_vector(n: usize, beta_u: f64) -> Vec<f64> {
    let mut beta = vec![1.0; n];
    beta.extend(std::iter::repeat_n(beta_u, n));
    beta
}

/// `μ = 0`, `u = softplus⁻¹(1)`.
pub fn default_init(n: usize) -> Vec<f64> {
    let mut phi = vec![0.0; n];
    phi.extend(std::iter::repeat_n(inv_softplus(1.0), n));
    phi
}

/// Iterates `φ_0..φ_T` and noisy gradients `g̃_1..g̃_T`; `noisy_grads[t]` is
/// `g̃_{t+1}`, the gradient evaluated at `params[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSgdTrace {
    pub params: Vec<Vec<f64>>,
    pub noisy_grads: Vec<Vec<f64>>,
    pub config: DpSgdConfig,
    pub effective_lr: Vec<f64>,
}

impl DpSgdTrace {
    pub fn steps(&self) -> usize {
        self.noisy_grads.len()
    }

    pub fn dim(&self) -> usize {
        self.effective_lr.len()
    }

    pub fn last(&self) -> &[f64] {
        self.params.last().expect("trace has T+1 rows")
    }

    pub fn last_variational(&self) -> VariationalParams {
        VariationalParams::from_flat(self.last()).expect("even length")
    }

    /// CSV with `# key=value` metadata lines, then `t,phi_*,g_*` rows for
    /// `t = 0..T`. Row `t` holds `φ_t` and `g̃_t`; the `g` cells of row 0 are empty.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let d = self.dim();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "# sigma_dp={:e}", c.noise_multiplier);
        let _ = writeln!(s, "# clip_norm={:e}", c.clip_norm);
        let _ = writeln!(s, "# sampling_rate={:e}", c.sampling_rate);
        let _ = writeln!(s, "# lr={}", join(&self.effective_lr));
        let _ = writeln!(s, "# beta={}", join(&c.precondition));
        let _ = writeln!(s, "# seed={}", c.seed);
        let header: Vec<String> = (0..d)
            .map(|i| format!("phi_{i}"))
            .chain((0..d).map(|i| format!("g_{i}")))
            .collect();
        let _ = writeln!(s, "t,{}", header.join(","));
        for (t, phi) in self.params.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in phi {
                let _ = write!(s, ",{v:e}");
            }
            if t == 0 {
                s.push_str(&",".repeat(d));
            } else {
                for v in &self.noisy_grads[t - 1] {
                    let _ = write!(s, ",{v:e}");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Runs DP-SGD on `−Σ ℓ(φ; x)`. Randomness (minibatches, ELBO draws, noise)
/// comes from one stream seeded by `cfg.seed`.
pub fn run_dpsgd<M: Model>(model: &M, data: &[M::Obs], vi: &ElboConfig, cfg: &DpSgdConfig) -> Result<DpSgdTrace> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let d = cfg.dim();
    let n = d / 2;
    if n != model.param_dim() {
        return Err(Error::InvalidArgument(format!(
            "init has {n} model parameters, model {} expects {}",
            model.name(),
            model.param_dim()
        )));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let lr = cfg.effective_lr();
    let beta = &cfg.precondition;
    let noise_scale = cfg.noise_multiplier * cfg.clip_norm;

    let mut params = Vec::with_capacity(cfg.steps + 1);
    let mut grads = Vec::with_capacity(cfg.steps);
    let mut phi = cfg.init.clone();
    params.push(phi.clone());
    let mut g = vec![0.0; d];
    let mut sum = vec![0.0; d];
    for step in 0..cfg.steps {
        let batch: Vec<usize> = (0..data.len()).filter(|_| rng.random::<f64>() < cfg.sampling_rate).collect();
        let eps = NoiseDraws::sample(&mut rng, vi.n_vi, n);
        let current = VariationalParams::from_flat(&phi)?;
        sum.iter_mut().for_each(|v| *v = 0.0);
        if !batch.is_empty() {
            let ev = ElboEvaluator::new(model, &current, &eps, vi.dataset_size).map_err(|e| Error::Divergence {
                step,
                detail: e.to_string(),
            })?;
            for &i in &batch {
                ev.grad_into(&data[i], &mut g).map_err(|e| Error::Divergence {
                    step,
                    detail: e.to_string(),
                })?;
                // gradient of the negative loss, preconditioned
                for (gj, bj) in g.iter_mut().zip(beta) {
                    *gj *= -bj;
                }
                clip_in_place(&mut g, cfg.clip_norm);
                for (s, gj) in sum.iter_mut().zip(&g) {
                    *s += gj;
                }
            }
        }
        let noisy: Vec<f64> = (0..d)
            .map(|j| {
                let eta: f64 = StandardNormal.sample(&mut rng);
                (sum[j] + noise_scale * eta) / beta[j]
            })
            .collect();
        for j in 0..d {
            phi[j] -= lr[j] * noisy[j];
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "non-finite variational parameters".into(),
            });
        }
        grads.push(noisy);
        params.push(phi.clone());
    }
    Ok(DpSgdTrace {
        params,
        noisy_grads: grads,
        config: cfg.clone(),
        effective_lr: lr,
    })
}
