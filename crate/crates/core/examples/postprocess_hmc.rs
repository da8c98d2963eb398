//! HMC over the gradient-model posterior (φ*, v), with sampler diagnostics.
//!
//! `cargo run --example postprocess_hmc`

use nadpvi::accountant::{calibrate_sigma, PrivacyBudget};
use nadpvi::dpsgd::{run_dpsgd, DpSgdConfig};
use nadpvi::models::{make_dirichlet_categorical, Model};
use nadpvi::postprocess::{fit_hmc, fit_laplace, HmcOptions, LaplaceOptions, PostProcessModel};
use nadpvi::rng::rng_from_seed;
use nadpvi::vi::ElboConfig;

fn main() -> nadpvi::Result<()> {
    let model = make_dirichlet_categorical([1.0, 1.0, 1.0])?;
    let mut rng = rng_from_seed(9);
    let data = model.simulate(&mut rng, &[0.5, 0.3, 0.2], 1000);

    let (steps, kappa) = (2000, 0.1);
    let sigma = calibrate_sigma(PrivacyBudget::new(1.0, 1e-5)?, steps, kappa)?;
    let mut cfg = DpSgdConfig::with_defaults(model.param_dim(), 1.0, kappa, steps, sigma, 3.0, 1);
    cfg.lr_scale = 2.0;
    let trace = run_dpsgd(&model, &data, &ElboConfig::new(10, data.len())?, &cfg)?;
    let pp = PostProcessModel::from_trace(&trace, steps / 2)?;

    let opts = HmcOptions {
        warmup: 500,
        draws: 2000,
        seed: 2,
        ..Default::default()
    };
    let hmc = fit_hmc(&pp, &opts)?;
    let lap = fit_laplace(&pp, &LaplaceOptions::default(), 2000, 3)?;
    println!("hmc diagnostics: {:?}", hmc.diagnostics);
    // (φ*, v) columns; v for the scale block is weakly identified, so HMC may
    // spread over A ≈ 0 where the Laplace fit sits at the mode
    println!("v prior: mean {:.1?} sd {:.1?}", pp.priors.v_mean, pp.priors.v_sd);
    for j in 0..pp.param_len() {
        let col = |s: &nadpvi::postprocess::PosteriorSamples| s.draws.iter().map(|d| d[j]).sum::<f64>() / s.len() as f64;
        println!("param {j}: hmc mean {:>9.4}  laplace mean {:>9.4}", col(&hmc), col(&lap));
    }
    Ok(())
}
