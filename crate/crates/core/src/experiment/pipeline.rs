use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_sigma, PrivacyBudget};
use crate::dpsgd::{run_dpsgd, DpSgdConfig, DpSgdTrace};
use crate::error::Result;
use crate::models::Model;
use crate::postprocess::{
    fit_hmc, fit_laplace, mixture_posterior, HmcOptions, LaplaceOptions, Method, NoiseAwarePosterior, PostProcessModel,
    PosteriorSamples, SigmaSub,
};
use crate::rng::derive_seed;
use crate::vi::ElboConfig;

/// Everything needed to turn a dataset into NA-DPVI and last-iterate posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub epsilon: f64,
    pub delta: f64,
    pub steps: usize,
    pub sampling_rate: f64,
    pub clip_norm: f64,
    pub beta_u: f64,
    pub lr_scale: f64,
    pub n_vi: usize,
    pub method: Method,
    /// `T*`; `None` means `T / 2`.
    pub burn_in: Option<usize>,
    pub warmup: usize,
    pub draws: usize,
    pub chains: usize,
    pub laplace: LaplaceOptions,
    pub estimate_sigma_sub: bool,
}

impl PipelineSettings {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 2)
    }
}

pub struct PipelineOutput {
    pub trace: DpSgdTrace,
    pub samples: PosteriorSamples,
    pub na_dpvi: NoiseAwarePosterior,
    pub naive: NoiseAwarePosterior,
}

/// A pipeline with its noise multiplier already calibrated.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub settings: PipelineSettings,
    pub sigma_dp: f64,
}

impl Pipeline {
    pub fn new(settings: PipelineSettings) -> Result<Self> {
        let budget = PrivacyBudget::new(settings.epsilon, settings.delta)?;
        let sigma_dp = calibrate_sigma(budget, settings.steps, settings.sampling_rate)?;
        Ok(Self { settings, sigma_dp })
    }

    pub fn dpsgd_config(&self, param_dim: usize, seed: u64) -> DpSgdConfig {
        let s = &self.settings;
        let mut c = DpSgdConfig::with_defaults(
            param_dim,
            s.clip_norm,
            s.sampling_rate,
            s.steps,
            self.sigma_dp,
            s.beta_u,
            seed,
        );
        c.lr_scale = s.lr_scale;
        c
    }

    /// DP-SGD, post-processing and both posteriors. `seed` drives DP-SGD and the
    /// post-processing sampler through separate derived streams.
    pub fn run<M: Model>(&self, model: &M, data: &[M::Obs], seed: u64) -> Result<PipelineOutput> {
        let s = &self.settings;
        let vi = ElboConfig::new(s.n_vi, data.len())?;
        let cfg = self.dpsgd_config(model.param_dim(), derive_seed(seed, 0));
        let trace = run_dpsgd(model, data, &vi, &cfg)?;
        let mut pp = PostProcessModel::from_trace(&trace, s.burn_in())?;
        if s.estimate_sigma_sub {
            pp = pp.with_sigma_sub(SigmaSub::Estimated)?;
        }
        let post_seed = derive_seed(seed, 1);
        let samples = match s.method {
            Method::Laplace => fit_laplace(&pp, &s.laplace, s.draws, post_seed)?,
            Method::Hmc => fit_hmc(
                &pp,
                &HmcOptions {
                    warmup: s.warmup,
                    draws: s.draws,
                    chains: s.chains,
                    seed: post_seed,
                    ..Default::default()
                },
            )?,
        };
        let na_dpvi = mixture_posterior(&samples)?;
        let naive = NoiseAwarePosterior::single(&trace.last_variational());
        Ok(PipelineOutput {
            trace,
            samples,
            na_dpvi,
            naive,
        })
    }
}
