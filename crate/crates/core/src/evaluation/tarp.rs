use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::postprocess::NoiseAwarePosterior;
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Anything TARP can draw unconstrained posterior samples from.
pub trait PosteriorSampler: Send {
    fn sample_one(&self, rng: &mut Rng) -> Vec<f64>;
}

impl PosteriorSampler for NoiseAwarePosterior {
    fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        NoiseAwarePosterior::sample_one(self, rng)
    }
}

/// Where the TARP reference point `θ_ref` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSampler {
    /// A prior draw pushed into the unconstrained space.
    Prior,
    /// Uniform over the bounding box of the posterior samples.
    UniformBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarpConfig {
    pub repetitions: usize,
    pub posterior_samples: usize,
    pub alpha_grid: Vec<f64>,
    pub reference: ReferenceSampler,
    pub seed: u64,
}

/// `{0.05, 0.10, …, 0.95}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

impl TarpConfig {
    pub fn new(repetitions: usize, posterior_samples: usize, seed: u64) -> Self {
        Self {
            repetitions,
            posterior_samples,
            alpha_grid: default_alpha_grid(),
            reference: ReferenceSampler::Prior,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 || self.posterior_samples == 0 {
            return Err(Error::InvalidArgument("TARP needs K >= 1 and N_tarp >= 1".into()));
        }
        validate_grid(&self.alpha_grid)
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "alpha grid must be strictly increasing inside (0, 1)".into(),
        ));
    }
    Ok(())
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Fraction of `samples` strictly closer to `reference` than `truth` is.
pub fn tarp_f(samples: &[Vec<f64>], truth: &[f64], reference: &[f64]) -> f64 {
    let r = dist2(truth, reference);
    samples.iter().filter(|s| dist2(s, reference) < r).count() as f64 / samples.len() as f64
}

/// `C(α) = mean_k 1[f_k < 1 − α]`.
pub fn coverage_from_f(f: &[f64], alpha_grid: &[f64]) -> Vec<f64> {
    alpha_grid
        .iter()
        .map(|a| f.iter().filter(|&&fk| fk < 1.0 - a).count() as f64 / f.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: Vec<f64>,
    pub coverage: Vec<f64>,
    /// `C(α) − (1 − α)`.
    pub coverage_error: Vec<f64>,
    pub rmse: f64,
    /// Successful repetitions that entered the coverage.
    pub repetitions: usize,
    pub failures: usize,
    pub posterior_samples: usize,
    pub reference: ReferenceSampler,
    pub seed: u64,
}

impl CoverageReport {
    pub fn from_coverage(alpha: Vec<f64>, coverage: Vec<f64>, repetitions: usize) -> Result<Self> {
        validate_grid(&alpha)?;
        if alpha.len() != coverage.len() || coverage.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument(
                "coverage values must match the grid and lie in [0, 1]".into(),
            ));
        }
        if repetitions == 0 {
            return Err(Error::InvalidArgument("a coverage report needs K >= 1".into()));
        }
        let coverage_error: Vec<f64> = alpha.iter().zip(&coverage).map(|(a, c)| c - (1.0 - a)).collect();
        let rmse = (coverage_error.iter().map(|e| e * e).sum::<f64>() / alpha.len() as f64).sqrt();
        Ok(Self {
            alpha,
            coverage,
            coverage_error,
            rmse,
            repetitions,
            failures: 0,
            posterior_samples: 0,
            reference: ReferenceSampler::Prior,
            seed: 0,
        })
    }

    pub fn from_f_values(f: &[f64], cfg: &TarpConfig, failures: usize) -> Result<Self> {
        let coverage = coverage_from_f(f, &cfg.alpha_grid);
        let mut r = Self::from_coverage(cfg.alpha_grid.clone(), coverage, f.len())?;
        r.failures = failures;
        r.posterior_samples = cfg.posterior_samples;
        r.reference = cfg.reference;
        r.seed = cfg.seed;
        Ok(r)
    }

    /// `alpha,coverage,coverage_error` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,coverage,coverage_error\n");
        for ((a, c), e) in self.alpha.iter().zip(&self.coverage).zip(&self.coverage_error) {
            let _ = writeln!(s, "{a},{c},{e}");
        }
        s
    }

    /// Parses [`Self::to_csv`] output; metadata fields are left at defaults.
    pub fn from_csv(text: &str, repetitions: usize) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty coverage CSV".into()))?;
        for col in ["alpha", "coverage", "coverage_error"] {
            if !header.split(',').any(|h| h == col) {
                return Err(Error::MissingColumn(col.into()));
            }
        }
        let mut alpha = Vec::new();
        let mut coverage = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            let num = |j: usize| -> Result<f64> {
                cells
                    .get(j)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("coverage CSV row {}: bad cell {j}", i + 2)))
            };
            alpha.push(num(0)?);
            coverage.push(num(1)?);
        }
        Self::from_coverage(alpha, coverage, repetitions)
    }

    /// JSON sidecar with everything except the curve itself.
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "repetitions": self.repetitions,
            "failures": self.failures,
            "posterior_samples": self.posterior_samples,
            "reference": self.reference,
            "seed": self.seed,
            "rmse": self.rmse,
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(&self.metadata_json()).expect("serializable") + "\n";
        std::fs::write(&json, body).map_err(|e| Error::io(&json, e))
    }
}

/// Root mean squared coverage error over the grid.
pub fn rmse(report: &CoverageReport) -> f64 {
    report.rmse
}

/// TARP results for several posteriors that share every repetition's truth,
/// dataset and reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarpOutcome {
    pub joint: Vec<CoverageReport>,
    /// `marginal[m][j]`: method `m`, coordinate `j`.
    pub marginal: Vec<Vec<CoverageReport>>,
}

struct Repetition {
    joint: Vec<f64>,
    marginal: Vec<Vec<f64>>,
}

/// Runs the TARP loop once and scores `methods` posteriors per repetition.
///
/// `pipeline(data, seed)` must return one posterior per method, always in the
/// same order.
pub fn tarp_multi<M, P, F>(model: &M, dataset_size: usize, methods: usize, pipeline: F, cfg: &TarpConfig) -> Result<TarpOutcome>
where
    M: Model,
    P: PosteriorSampler,
    F: Fn(&[M::Obs], u64) -> Result<Vec<P>> + Sync,
{
    cfg.validate()?;
    if methods == 0 {
        return Err(Error::InvalidArgument("need at least one method".into()));
    }
    let n = model.param_dim();
    let reps: Vec<Result<Repetition>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, k as u64));
            let theta = model.prior_sample(&mut rng);
            let data = model.simulate(&mut rng, &theta, dataset_size);
            let pipeline_seed: u64 = rng.random();
            let posts = pipeline(&data, pipeline_seed)?;
            if posts.len() != methods {
                return Err(Error::InvalidArgument(format!(
                    "pipeline returned {} posteriors, expected {methods}",
                    posts.len()
                )));
            }
            let truth = model.transform().forward(&theta);
            let samples: Vec<Vec<Vec<f64>>> = posts
                .iter()
                .map(|p| (0..cfg.posterior_samples).map(|_| p.sample_one(&mut rng)).collect())
                .collect();
            let reference = match cfg.reference {
                ReferenceSampler::Prior => model.prior_sample_unconstrained(&mut rng),
                ReferenceSampler::UniformBox => {
                    let all = samples.iter().flatten();
                    let mut lo = vec![f64::INFINITY; n];
                    let mut hi = vec![f64::NEG_INFINITY; n];
                    for s in all {
                        for j in 0..n {
                            lo[j] = lo[j].min(s[j]);
                            hi[j] = hi[j].max(s[j]);
                        }
                    }
                    (0..n).map(|j| lo[j] + (hi[j] - lo[j]) * rng.random::<f64>()).collect()
                }
            };
            let joint = samples.iter().map(|s| tarp_f(s, &truth, &reference)).collect();
            let marginal = samples
                .iter()
                .map(|s| {
                    (0..n)
                        .map(|j| {
                            let r = (truth[j] - reference[j]).abs();
                            s.iter().filter(|v| (v[j] - reference[j]).abs() < r).count() as f64 / s.len() as f64
                        })
                        .collect()
                })
                .collect();
            Ok(Repetition { joint, marginal })
        })
        .collect();

    let mut ok = Vec::with_capacity(reps.len());
    let mut failures = 0;
    let mut first = None;
    for r in reps {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                failures += 1;
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failures as f64 > 0.05 * cfg.repetitions as f64 || ok.is_empty() {
        return Err(Error::FailureRate {
            failures,
            total: cfg.repetitions,
            first: first.unwrap_or_default(),
        });
    }
    let mut joint = Vec::with_capacity(methods);
    let mut marginal = Vec::with_capacity(methods);
    for m in 0..methods {
        let f: Vec<f64> = ok.iter().map(|r| r.joint[m]).collect();
        joint.push(CoverageReport::from_f_values(&f, cfg, failures)?);
        let per_dim = (0..n)
            .map(|j| {
                let f: Vec<f64> = ok.iter().map(|r| r.marginal[m][j]).collect();
                CoverageReport::from_f_values(&f, cfg, failures)
            })
            .collect::<Result<Vec<_>>>()?;
        marginal.push(per_dim);
    }
    Ok(TarpOutcome { joint, marginal })
}

/// Joint TARP coverage of a single pipeline.
pub fn tarp_coverage<M, P, F>(model: &M, dataset_size: usize, pipeline: F, cfg: &TarpConfig) -> Result<CoverageReport>
where
    M: Model,
    P: PosteriorSampler,
    F: Fn(&[M::Obs], u64) -> Result<P> + Sync,
{
    let out = tarp_multi(model, dataset_size, 1, |d, s| pipeline(d, s).map(|p| vec![p]), cfg)?;
    Ok(out.joint.into_iter().next().expect("one method"))
}

/// Per-coordinate coverages of a single pipeline.
pub fn marginal_coverages<M, P, F>(model: &M, dataset_size: usize, pipeline: F, cfg: &TarpConfig) -> Result<Vec<CoverageReport>>
where
    M: Model,
    P: PosteriorSampler,
    F: Fn(&[M::Obs], u64) -> Result<P> + Sync,
{
    let out = tarp_multi(model, dataset_size, 1, |d, s| pipeline(d, s).map(|p| vec![p]), cfg)?;
    Ok(out.marginal.into_iter().next().expect("one method"))
}
