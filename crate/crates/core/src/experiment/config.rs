use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineSettings;
use crate::error::{Error, Result};
use crate::evaluation::{default_alpha_grid, ReferenceSampler, TarpConfig};
use crate::postprocess::{LaplaceOptions, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Gamma-Exponential.
    ExpfamM1,
    /// Beta-Bernoulli.
    ExpfamM2,
    /// Dirichlet-Categorical over three outcomes.
    ExpfamM3,
    /// 10-feature Bayesian linear regression.
    Linreg10d,
    /// Logistic regression on an ingested UCI Adult split.
    AdultLogreg,
    /// Logistic regression on synthetic data with `model.features` covariates.
    Custom,
}

impl ExperimentKind {
    pub fn uses_tarp(self) -> bool {
        !matches!(self, ExperimentKind::AdultLogreg | ExperimentKind::Custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Ignored for adult_logreg, whose size comes from the training file.
    #[serde(default)]
    pub dataset_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub write_traces: bool,
    #[serde(default)]
    pub write_samples: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "two")]
    pub prior_a: f64,
    #[serde(default = "two")]
    pub prior_b: f64,
    #[serde(default = "ones3")]
    pub dirichlet_alpha: [f64; 3],
    #[serde(default = "five")]
    pub features: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            prior_a: 2.0,
            prior_b: 2.0,
            dirichlet_alpha: [1.0; 3],
            features: 5,
        }
    }
}

fn two() -> f64 {
    2.0
}
fn ones3() -> [f64; 3] {
    [1.0; 3]
}
fn five() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSgdSection {
    pub steps: usize,
    pub sampling_rate: f64,
    pub clip_norm: f64,
    #[serde(default = "ten")]
    pub beta_u: f64,
    #[serde(default = "one")]
    pub lr_scale: f64,
    #[serde(default = "ten_usize")]
    pub n_vi: usize,
}

fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}
fn ten_usize() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessSection {
    pub method: Method,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "thousand")]
    pub warmup: usize,
    #[serde(default = "thousand")]
    pub draws: usize,
    #[serde(default = "one_usize")]
    pub chains: usize,
    #[serde(default = "five_hundred")]
    pub laplace_steps: usize,
    #[serde(default)]
    pub estimate_sigma_sub: bool,
}

fn thousand() -> usize {
    1000
}
fn five_hundred() -> usize {
    500
}
fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Independent repetitions of the whole evaluation.
    #[serde(default = "five")]
    pub repetitions: usize,
    /// TARP datasets per repetition (K).
    #[serde(default = "hundred")]
    pub k: usize,
    #[serde(default = "thousand")]
    pub posterior_samples: usize,
    #[serde(default = "prior_ref")]
    pub reference: ReferenceSampler,
    #[serde(default)]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(default = "ten_usize")]
    pub calibration_bins: usize,
    /// Synthetic test-set size for `custom`.
    #[serde(default = "thousand")]
    pub test_size: usize,
    #[serde(default = "thousand")]
    pub predictive_samples: usize,
}

fn hundred() -> usize {
    100
}
fn prior_ref() -> ReferenceSampler {
    ReferenceSampler::Prior
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            repetitions: 5,
            k: 100,
            posterior_samples: 1000,
            reference: ReferenceSampler::Prior,
            alpha_grid: None,
            calibration_bins: 10,
            test_size: 1000,
            predictive_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub model: ModelSection,
    pub privacy: PrivacySection,
    pub dpsgd: DpSgdSection,
    pub postprocess: PostprocessSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub data: DataSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative `data` paths are resolved against the config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.train, &mut cfg.data.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let e = &self.experiment;
        if e.dataset_size == 0 && e.kind != ExperimentKind::AdultLogreg {
            return bad("experiment.dataset_size must be >= 1".into());
        }
        let p = &self.privacy;
        if !(p.epsilon > 0.0) || !(p.delta > 0.0 && p.delta < 1.0) {
            return bad("privacy.epsilon must be > 0 and privacy.delta in (0, 1)".into());
        }
        let d = &self.dpsgd;
        if d.steps < 2 {
            return bad("dpsgd.steps must be >= 2".into());
        }
        if !(d.sampling_rate > 0.0 && d.sampling_rate <= 1.0) {
            return bad("dpsgd.sampling_rate must lie in (0, 1]".into());
        }
        if !(d.clip_norm > 0.0) || !(d.beta_u > 0.0) || !(d.lr_scale > 0.0) || d.n_vi == 0 {
            return bad("dpsgd.clip_norm, beta_u, lr_scale must be > 0 and n_vi >= 1".into());
        }
        let pp = &self.postprocess;
        if let Some(b) = pp.burn_in {
            if b == 0 || b >= d.steps {
                return bad(format!("postprocess.burn_in must lie in [1, steps), got {b}"));
            }
        }
        if pp.draws == 0 || pp.warmup == 0 || pp.chains == 0 {
            return bad("postprocess.draws, warmup and chains must be >= 1".into());
        }
        let ev = &self.evaluation;
        if ev.repetitions == 0 || ev.k == 0 || ev.posterior_samples == 0 || ev.calibration_bins == 0 {
            return bad("evaluation.repetitions, k, posterior_samples and calibration_bins must be >= 1".into());
        }
        self.tarp_config(0)
            .validate()
            .map_err(|e| Error::Config(format!("evaluation.alpha_grid: {e}")))?;
        if e.kind == ExperimentKind::AdultLogreg && (self.data.train.is_none() || self.data.test.is_none()) {
            return bad("adult_logreg needs data.train and data.test (see `ingest-adult`)".into());
        }
        if e.kind == ExperimentKind::Custom && self.model.features == 0 {
            return bad("model.features must be >= 1".into());
        }
        Ok(())
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        let d = &self.dpsgd;
        let pp = &self.postprocess;
        PipelineSettings {
            epsilon: self.privacy.epsilon,
            delta: self.privacy.delta,
            steps: d.steps,
            sampling_rate: d.sampling_rate,
            clip_norm: d.clip_norm,
            beta_u: d.beta_u,
            lr_scale: d.lr_scale,
            n_vi: d.n_vi,
            method: pp.method,
            burn_in: pp.burn_in,
            warmup: pp.warmup,
            draws: pp.draws,
            chains: pp.chains,
            laplace: LaplaceOptions {
                opt_steps: pp.laplace_steps,
                ..Default::default()
            },
            estimate_sigma_sub: pp.estimate_sigma_sub,
        }
    }

    pub fn tarp_config(&self, seed: u64) -> TarpConfig {
        let ev = &self.evaluation;
        TarpConfig {
            repetitions: ev.k,
            posterior_samples: ev.posterior_samples,
            alpha_grid: ev.alpha_grid.clone().unwrap_or_else(default_alpha_grid),
            reference: ev.reference,
            seed,
        }
    }
}

/// Every recognised key with its meaning; printed by `nadpvi config-reference`.
pub const CONFIG_REFERENCE: &str = r#"[experiment]
kind                 expfam_m1 | expfam_m2 | expfam_m3 | linreg10d | adult_logreg | custom   (required)
dataset_size         N, observations per simulated dataset; unused by adult_logreg       (required)
seed                 master seed; every repetition seed is derived from it               (required)
output_dir           directory for artifacts; relative to the working directory          (required)
workers              worker threads for repetitions, 0 = all cores                       (default 0)
write_traces         also dump the DP-SGD trace of the first dataset per repetition      (default false)
write_samples        also dump the post-processing draws of that dataset                 (default false)

[model]
prior_a, prior_b     Gamma(a, b) prior for expfam_m1, Beta(a, b) for expfam_m2          (default 2, 2)
dirichlet_alpha      Dirichlet prior for expfam_m3                                       (default [1, 1, 1])
features             covariates of the synthetic logistic model (custom)                 (default 5)

[privacy]
epsilon, delta       target (epsilon, delta); sigma_DP is calibrated by the accountant   (required)

[dpsgd]
steps                T                                                                   (required)
sampling_rate        kappa, Poisson sampling probability                                 (required)
clip_norm            C                                                                   (required)
beta_u               preconditioner for the scale block u                                (default 10)
lr_scale             lambda_c in the learning-rate heuristic                             (default 1)
n_vi                 Monte-Carlo draws per ELBO evaluation                               (default 10)

[postprocess]
method               laplace | hmc                                                       (required)
burn_in              T*, first trace index used                                          (default T/2)
warmup, draws        HMC warmup iterations and kept draws; draws also sets Laplace draws (default 1000, 1000)
chains               HMC chains                                                          (default 1)
laplace_steps        Adam iterations before Newton polishing                             (default 500)
estimate_sigma_sub   experimental: learn a diagonal subsampling covariance               (default false)

[evaluation]
repetitions          independent repetitions of the whole evaluation                     (default 5)
k                    TARP datasets per repetition                                        (default 100)
posterior_samples    N_tarp, posterior draws per dataset                                 (default 1000)
reference            prior | uniform_box, TARP reference point sampler                   (default prior)
alpha_grid           strictly increasing values in (0, 1)                                (default 0.05..0.95)
calibration_bins     bins of the calibration curve (logistic kinds)                      (default 10)
test_size            synthetic test-set size (custom)                                    (default 1000)
predictive_samples   posterior draws per predictive probability                          (default 1000)

[data]
train, test          CSVs written by `nadpvi ingest-adult`; relative to the config file  (adult_logreg)
"#;
