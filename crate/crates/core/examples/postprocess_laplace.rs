//! Noise-aware posterior from a DP-SGD trace via the Laplace approximation,
//! compared with the last iterate and the exact posterior.
//!
//! `cargo run --example postprocess_laplace`

use nadpvi::accountant::{calibrate_sigma, PrivacyBudget};
use nadpvi::dpsgd::{run_dpsgd, DpSgdConfig};
use nadpvi::math::{mean, variance};
use nadpvi::models::{make_gamma_exponential, Model};
use nadpvi::postprocess::{
    fit_laplace, mixture_posterior, sample_posterior, LaplaceOptions, NoiseAwarePosterior, PostProcessModel,
};
use nadpvi::rng::rng_from_seed;
use nadpvi::vi::ElboConfig;

fn main() -> nadpvi::Result<()> {
    let model = make_gamma_exponential(2.0, 2.0)?;
    let mut rng = rng_from_seed(5);
    let data = model.simulate(&mut rng, &[0.8], 1000);

    let (steps, kappa) = (2000, 0.1);
    let sigma = calibrate_sigma(PrivacyBudget::new(0.1, 1e-5)?, steps, kappa)?;
    let mut cfg = DpSgdConfig::with_defaults(1, 1.0, kappa, steps, sigma, 3.0, 7);
    cfg.lr_scale = 2.0;
    let trace = run_dpsgd(&model, &data, &ElboConfig::new(10, data.len())?, &cfg)?;

    let pp = PostProcessModel::from_trace(&trace, steps / 2)?;
    let samples = fit_laplace(&pp, &LaplaceOptions::default(), 1000, 11)?;
    let na = mixture_posterior(&samples)?;
    let naive = NoiseAwarePosterior::single(&trace.last_variational());

    // summaries in the unconstrained space z = softplus⁻¹(λ)
    let exact = model.exact_posterior(&data);
    let z: Vec<f64> = (0..4000)
        .map(|_| model.transform().forward(&exact.sample(&mut rng))[0])
        .collect();
    println!("{:>8} {:>8} {:>8}", "", "mean", "sd");
    println!("{:>8} {:>8.4} {:>8.4}", "exact", mean(&z), variance(&z).sqrt());
    for (name, post) in [("na_dpvi", &na), ("naive", &naive)] {
        let s: Vec<f64> = sample_posterior(post, &mut rng, 4000).into_iter().map(|v| v[0]).collect();
        println!("{name:>8} {:>8.4} {:>8.4}", mean(&s), variance(&s).sqrt());
    }
    Ok(())
}
