use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::adult::read_dataset_csv;
use super::config::{ExperimentConfig, ExperimentKind};
use super::pipeline::Pipeline;
use crate::error::{Error, Result};
use crate::evaluation::{calibration_curve, rmse, tarp_multi, CalibrationReport, CoverageReport, TarpOutcome};
use crate::models::{
    make_beta_bernoulli, make_dirichlet_categorical, make_gamma_exponential, make_linear_regression_10d,
    make_logistic_regression, Example, LogisticRegression, Model,
};
use crate::postprocess::posterior_predictive_logistic;
use crate::rng::{derive_seed, rng_from_seed};

/// The two posteriors every run compares, in output order.
pub const METHODS: [&str; 2] = ["na_dpvi", "naive"];

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(w) = self.workers {
            cfg.experiment.workers = w;
        }
        if let Some(d) = &self.out_dir {
            cfg.experiment.output_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.experiment.seed = s;
        }
    }
}

/// Everything needed to reproduce a run. Wall-clock timings and the thread count
/// live in a separate `timings.json` so that reruns leave this file byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub model: String,
    pub sigma_dp: f64,
    pub effective_lr: Vec<f64>,
    pub burn_in: usize,
    pub repetition_seeds: Vec<u64>,
}

/// Per-method RMSE across repetitions (TARP coverage or predictive calibration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub rmse: Vec<f64>,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `tarp` or `calibration`.
    pub metric: String,
    pub methods: Vec<MethodSummary>,
    /// Repetitions in which NA-DPVI has the lower RMSE.
    pub na_dpvi_better: usize,
    pub repetitions: usize,
}

impl RunSummary {
    fn new(metric: &str, per_rep: &[[f64; 2]]) -> Self {
        let methods = METHODS
            .iter()
            .enumerate()
            .map(|(m, name)| {
                let r: Vec<f64> = per_rep.iter().map(|x| x[m]).collect();
                let mean = r.iter().sum::<f64>() / r.len() as f64;
                let var = if r.len() > 1 {
                    r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64
                } else {
                    0.0
                };
                MethodSummary {
                    method: (*name).to_string(),
                    rmse: r,
                    mean_rmse: mean,
                    sd_rmse: var.sqrt(),
                }
            })
            .collect();
        Self {
            metric: metric.to_string(),
            methods,
            na_dpvi_better: per_rep.iter().filter(|x| x[0] < x[1]).count(),
            repetitions: per_rep.len(),
        }
    }

    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub summary: RunSummary,
    pub output_dir: PathBuf,
}

/// Process exit status for an error: 2 config, 3 divergence, 4 failure-rate breach, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::MissingColumn(_) => 2,
        Error::Divergence { .. } => 3,
        Error::FailureRate { .. } => 4,
        _ => 1,
    }
}

/// Writes the coverage CSV plus its JSON sidecar. `K = 0` reports are refused.
pub fn emit_plotdata(report: &CoverageReport, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    if report.repetitions == 0 {
        return Err(Error::InvalidArgument("cannot emit a coverage report with K = 0".into()));
    }
    report.write(&dir, stem)?;
    Ok(dir.as_ref().join(format!("{stem}.csv")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Mean coverage across repetitions on the shared grid.
fn pooled(reports: &[&CoverageReport]) -> Result<CoverageReport> {
    let first = reports[0];
    let n = reports.len() as f64;
    let coverage = (0..first.alpha.len())
        .map(|i| (reports.iter().map(|r| r.coverage[i]).sum::<f64>() / n).clamp(0.0, 1.0))
        .collect();
    let mut r = CoverageReport::from_coverage(first.alpha.clone(), coverage, reports.iter().map(|r| r.repetitions).sum())?;
    r.failures = reports.iter().map(|r| r.failures).sum();
    r.posterior_samples = first.posterior_samples;
    r.reference = first.reference;
    r.seed = first.seed;
    Ok(r)
}

/// Loads a config, applies overrides and runs it.
pub fn run_experiment_file(path: impl AsRef<Path>, overrides: &RunOverrides) -> Result<RunResult> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    run_experiment(&cfg)
}

/// Runs every repetition of `cfg` on a pool of `experiment.workers` threads and
/// writes the artifacts to `experiment.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.workers)
        .build()
        .map_err(|e| Error::Config(format!("experiment.workers: {e}")))?;
    pool.install(|| dispatch(cfg))
}

fn dispatch(cfg: &ExperimentConfig) -> Result<RunResult> {
    let m = &cfg.model;
    match cfg.experiment.kind {
        ExperimentKind::ExpfamM1 => run_tarp(cfg, &make_gamma_exponential(m.prior_a, m.prior_b)?),
        ExperimentKind::ExpfamM2 => run_tarp(cfg, &make_beta_bernoulli(m.prior_a, m.prior_b)?),
        ExperimentKind::ExpfamM3 => run_tarp(cfg, &make_dirichlet_categorical(m.dirichlet_alpha)?),
        ExperimentKind::Linreg10d => run_tarp(cfg, &make_linear_regression_10d()),
        ExperimentKind::Custom => run_calibration(cfg, &make_logistic_regression(m.features)?, None),
        ExperimentKind::AdultLogreg => {
            let train = read_dataset_csv(cfg.data.train.as_ref().expect("validated"))?;
            let test = read_dataset_csv(cfg.data.test.as_ref().expect("validated"))?;
            let p = train
                .first()
                .map(|e| e.x.len())
                .ok_or_else(|| Error::Parse("empty training set".into()))?;
            if test.iter().chain(&train).any(|e| e.x.len() != p) {
                return Err(Error::Parse(
                    "train and test rows must have the same number of features".into(),
                ));
            }
            run_calibration(cfg, &make_logistic_regression(p)?, Some((train, test)))
        }
    }
}

struct Prepared {
    pipeline: Pipeline,
    manifest: RunManifest,
    out: PathBuf,
    started: Instant,
}

fn prepare<M: Model>(cfg: &ExperimentConfig, model: &M) -> Result<Prepared> {
    let started = Instant::now();
    let pipeline = Pipeline::new(cfg.pipeline_settings())?;
    let dp = pipeline.dpsgd_config(model.param_dim(), 0);
    let seeds = (0..cfg.evaluation.repetitions)
        .map(|r| derive_seed(cfg.experiment.seed, r as u64))
        .collect();
    // the worker count is a scheduling knob, recorded in timings.json instead
    let mut echo = cfg.clone();
    echo.experiment.workers = 0;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: echo,
        model: model.name().to_string(),
        sigma_dp: pipeline.sigma_dp,
        effective_lr: dp.effective_lr(),
        burn_in: pipeline.settings.burn_in(),
        repetition_seeds: seeds,
    };
    let out = cfg.experiment.output_dir.clone();
    create_dir(&out)?;
    Ok(Prepared {
        pipeline,
        manifest,
        out,
        started,
    })
}

fn finish(p: Prepared, summary: RunSummary, rep_secs: Vec<f64>) -> Result<RunResult> {
    write_json(&p.out.join("manifest.json"), &p.manifest)?;
    write_json(&p.out.join("summary.json"), &summary)?;
    let timings = json!({
        "total_seconds": p.started.elapsed().as_secs_f64(),
        "repetition_seconds": rep_secs,
        "threads": rayon::current_num_threads(),
    });
    write_json(&p.out.join("timings.json"), &timings)?;
    Ok(RunResult {
        manifest: p.manifest,
        summary,
        output_dir: p.out,
    })
}

fn run_tarp<M: Model>(cfg: &ExperimentConfig, model: &M) -> Result<RunResult> {
    let prep = prepare(cfg, model)?;
    let n = cfg.experiment.dataset_size;
    let pipeline = &prep.pipeline;
    let run_pipe = |data: &[M::Obs], seed: u64| {
        let out = pipeline.run(model, data, seed)?;
        Ok(vec![out.na_dpvi, out.naive])
    };
    let mut outcomes: Vec<TarpOutcome> = Vec::new();
    let mut secs = Vec::new();
    for (r, &seed) in prep.manifest.repetition_seeds.iter().enumerate() {
        let t0 = Instant::now();
        let tarp = cfg.tarp_config(seed);
        let outcome = tarp_multi(model, n, METHODS.len(), run_pipe, &tarp)?;
        let dir = prep.out.join(format!("rep{r:02}"));
        create_dir(&dir)?;
        for (name, rep) in METHODS.iter().zip(&outcome.joint) {
            emit_plotdata(rep, &dir, name)?;
        }
        if cfg.experiment.write_traces || cfg.experiment.write_samples {
            dump_first_dataset(cfg, model, pipeline, seed, &dir)?;
        }
        secs.push(t0.elapsed().as_secs_f64());
        outcomes.push(outcome);
    }
    for (m, name) in METHODS.iter().enumerate() {
        let joint: Vec<&CoverageReport> = outcomes.iter().map(|o| &o.joint[m]).collect();
        emit_plotdata(&pooled(&joint)?, &prep.out, name)?;
        for j in 0..model.param_dim() {
            let marg: Vec<&CoverageReport> = outcomes.iter().map(|o| &o.marginal[m][j]).collect();
            emit_plotdata(&pooled(&marg)?, &prep.out, &format!("{name}_marginal_{j}"))?;
        }
    }
    let per_rep: Vec<[f64; 2]> = outcomes.iter().map(|o| [rmse(&o.joint[0]), rmse(&o.joint[1])]).collect();
    finish(prep, RunSummary::new("tarp", &per_rep), secs)
}

/// Replays the first TARP dataset of a repetition and writes its trace and draws.
fn dump_first_dataset<M: Model>(
    cfg: &ExperimentConfig,
    model: &M,
    pipeline: &Pipeline,
    tarp_seed: u64,
    dir: &Path,
) -> Result<()> {
    let mut rng = rng_from_seed(derive_seed(tarp_seed, 0));
    let theta = model.prior_sample(&mut rng);
    let data = model.simulate(&mut rng, &theta, cfg.experiment.dataset_size);
    let seed: u64 = rng.random();
    write_dumps(cfg, model, pipeline, &data, seed, dir)
}

fn write_dumps<M: Model>(
    cfg: &ExperimentConfig,
    model: &M,
    pipeline: &Pipeline,
    data: &[M::Obs],
    seed: u64,
    dir: &Path,
) -> Result<()> {
    let out = pipeline.run(model, data, seed)?;
    if cfg.experiment.write_traces {
        out.trace.write_csv(dir.join("trace.csv"))?;
    }
    if cfg.experiment.write_samples {
        let s = &pipeline.settings;
        let meta = [
            ("method", s.method.to_string()),
            ("warmup", s.warmup.to_string()),
            ("draws", s.draws.to_string()),
            ("burn_in", s.burn_in().to_string()),
            ("seed", seed.to_string()),
        ];
        out.samples.write_csv(dir.join("samples.csv"), &meta)?;
    }
    Ok(())
}

fn run_calibration(
    cfg: &ExperimentConfig,
    model: &LogisticRegression,
    fixed: Option<(Vec<Example>, Vec<Example>)>,
) -> Result<RunResult> {
    let prep = prepare(cfg, model)?;
    let ev = &cfg.evaluation;
    let pipeline = &prep.pipeline;
    let per_rep = prep
        .manifest
        .repetition_seeds
        .par_iter()
        .map(|&seed| -> Result<(Vec<CalibrationReport>, f64)> {
            let t0 = Instant::now();
            let mut rng = rng_from_seed(seed);
            let (train, test) = match &fixed {
                Some((tr, te)) => (tr.clone(), te.clone()),
                None => {
                    let theta = model.prior_sample(&mut rng);
                    let tr = model.simulate(&mut rng, &theta, cfg.experiment.dataset_size);
                    let te = model.simulate(&mut rng, &theta, ev.test_size);
                    (tr, te)
                }
            };
            let pipe_seed: u64 = rng.random();
            let out = pipeline.run(model, &train, pipe_seed)?;
            let labels: Vec<bool> = test.iter().map(|e| e.y > 0.5).collect();
            let reports = [&out.na_dpvi, &out.naive]
                .iter()
                .map(|post| {
                    let preds: Vec<f64> = test
                        .iter()
                        .map(|e| posterior_predictive_logistic(post, model, &e.x, &mut rng, ev.predictive_samples))
                        .collect();
                    calibration_curve(&preds, &labels, ev.calibration_bins)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((reports, t0.elapsed().as_secs_f64()))
        })
        .collect::<Vec<_>>();
    let mut rmses = Vec::new();
    let mut secs = Vec::new();
    for (r, res) in per_rep.into_iter().enumerate() {
        let (reports, t) = res?;
        let dir = prep.out.join(format!("rep{r:02}"));
        create_dir(&dir)?;
        for (name, rep) in METHODS.iter().zip(&reports) {
            rep.write(&dir, &format!("calibration_{name}"))?;
        }
        rmses.push([reports[0].rmse, reports[1].rmse]);
        secs.push(t);
    }
    if cfg.experiment.write_traces || cfg.experiment.write_samples {
        let seed = prep.manifest.repetition_seeds[0];
        let mut rng = rng_from_seed(seed);
        let train = match &fixed {
            Some((tr, _)) => tr.clone(),
            None => {
                let theta = model.prior_sample(&mut rng);
                let tr = model.simulate(&mut rng, &theta, cfg.experiment.dataset_size);
                model.simulate(&mut rng, &theta, ev.test_size);
                tr
            }
        };
        let pipe_seed: u64 = rng.random();
        write_dumps(cfg, model, pipeline, &train, pipe_seed, &prep.out.join("rep00"))?;
    }
    finish(prep, RunSummary::new("calibration", &rmses), secs)
}
