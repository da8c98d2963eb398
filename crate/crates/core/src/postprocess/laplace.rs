//! MAP search (Adam, then damped Newton) and the Laplace approximation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceOptions {
    /// Adam iterations before Newton polishing.
    pub opt_steps: usize,
    pub learning_rate: f64,
    /// Newton iterations allowed after Adam.
    pub newton_steps: usize,
    /// Bound on the Newton decrement `√(gᵀ(−H)⁻¹g)` at the returned mode.
    pub tolerance: f64,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self {
            opt_steps: 500,
            learning_rate: 1e-2,
            newton_steps: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub mode: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Jitter that was added to `−H` before inversion.
    pub jitter: f64,
    /// Newton decrement at the mode.
    pub grad_norm: f64,
    pub iterations: usize,
    chol: DMatrix<f64>,
}

impl LaplaceFit {
    pub fn sample(&self, rng: &mut Rng, m: usize) -> Vec<Vec<f64>> {
        let k = self.mode.len();
        (0..m)
            .map(|_| {
                let z = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)));
                let x = &self.chol * z;
                self.mode.iter().zip(x.iter()).map(|(a, b)| a + b).collect()
            })
            .collect()
    }
}

/// Central differences of the analytic gradient, step `1e-4·max(|xₖ|, 1)`, symmetrized.
pub(crate) fn fd_hessian<D: LogDensity + ?Sized>(target: &D, x: &[f64]) -> DMatrix<f64> {
    let k = x.len();
    let mut h = DMatrix::zeros(k, k);
    let mut gp = vec![0.0; k];
    let mut gm = vec![0.0; k];
    let mut xp = x.to_vec();
    for j in 0..k {
        let step = 1e-4 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        target.log_density_grad(&xp, &mut gp);
        xp[j] = x[j] - step;
        target.log_density_grad(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..k {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

fn cholesky_with_jitter(neg_h: &DMatrix<f64>, start: f64, limit: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let k = neg_h.nrows();
    if let Some(c) = Cholesky::new(neg_h.clone()) {
        return Some((c, 0.0));
    }
    let mut jitter = start;
    while jitter <= limit * (1.0 + 1e-12) {
        if let Some(c) = Cholesky::new(neg_h + DMatrix::identity(k, k) * jitter) {
            return Some((c, jitter));
        }
        jitter *= 10.0;
    }
    None
}

fn adam<D: LogDensity + ?Sized>(target: &D, x: &mut [f64], steps: usize, lr: f64) {
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let k = x.len();
    let mut m = vec![0.0; k];
    let mut v = vec![0.0; k];
    let mut g = vec![0.0; k];
    for t in 1..=steps {
        let lp = target.log_density_grad(x, &mut g);
        if !lp.is_finite() || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for j in 0..k {
            // ascent on log p
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            x[j] += lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
        }
    }
}

/// Finds the mode of `target` starting from `init` and fits a Gaussian there.
pub fn laplace_fit<D: LogDensity + ?Sized>(target: &D, init: &[f64], opts: &LaplaceOptions) -> Result<LaplaceFit> {
    let k = target.dim();
    if init.len() != k {
        return Err(Error::InvalidArgument(format!(
            "init has length {}, target dimension is {k}",
            init.len()
        )));
    }
    let mut x = init.to_vec();
    let mut best = x.clone();
    adam(target, &mut x, opts.opt_steps, opts.learning_rate);
    if !target.log_density(&x).is_finite() || target.log_density(&x) < target.log_density(&best) {
        x = best.clone();
    }

    let mut g = vec![0.0; k];
    let mut decrement = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..opts.newton_steps {
        iterations = it + 1;
        let lp = target.log_density_grad(&x, &mut g);
        let neg_h = -fd_hessian(target, &x);
        let scale = neg_h.diagonal().iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
        // Levenberg-style damping away from the mode; the final covariance uses the strict policy below
        let (chol, _) = cholesky_with_jitter(&neg_h, 1e-12 * scale, 1e12 * scale)
            .ok_or(Error::NotPositiveDefinite { jitter: 1e12 * scale })?;
        let gv = DVector::from_column_slice(&g);
        let step = chol.solve(&gv);
        decrement = gv.dot(&step).max(0.0).sqrt();
        if decrement < opts.tolerance {
            break;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let lc = target.log_density(&cand);
            if lc.is_finite() && lc >= lp {
                x = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        best.clone_from(&x);
    }
    if decrement >= opts.tolerance {
        target.log_density_grad(&x, &mut g);
        let neg_h = -fd_hessian(target, &x);
        if let Some((chol, _)) = cholesky_with_jitter(&neg_h, 1e-8, 1e-4) {
            let gv = DVector::from_column_slice(&g);
            decrement = gv.dot(&chol.solve(&gv)).max(0.0).sqrt();
        }
        if !(decrement < opts.tolerance) {
            return Err(Error::MapNotConverged {
                grad_norm: decrement,
                tolerance: opts.tolerance,
            });
        }
    }

    let neg_h = -fd_hessian(target, &x);
    let (chol, jitter) = cholesky_with_jitter(&neg_h, 1e-8, 1e-4).ok_or(Error::NotPositiveDefinite { jitter: 1e-4 })?;
    let covariance = chol.inverse();
    let cov_chol = Cholesky::new(covariance.clone())
        .ok_or(Error::NotPositiveDefinite { jitter })?
        .l();
    Ok(LaplaceFit {
        mode: x,
        covariance,
        jitter,
        grad_norm: decrement,
        iterations,
        chol: cov_chol,
    })
}
