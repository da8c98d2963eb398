//! DP-SGD on the ELBO, recording the released trace.
//!
//! `cargo run --example dpsgd_trace > trace.csv`

use nadpvi::accountant::{calibrate_sigma, PrivacyBudget};
use nadpvi::dpsgd::{lr_heuristic, run_dpsgd, DpSgdConfig};
use nadpvi::models::{make_beta_bernoulli, Model};
use nadpvi::rng::rng_from_seed;
use nadpvi::vi::ElboConfig;

fn main() -> nadpvi::Result<()> {
    let model = make_beta_bernoulli(2.0, 2.0)?;
    let mut rng = rng_from_seed(3);
    let data = model.simulate(&mut rng, &[0.3], 1000);

    let (steps, kappa) = (2000, 0.1);
    let sigma = calibrate_sigma(PrivacyBudget::new(1.0, 1e-5)?, steps, kappa)?;
    let mut cfg = DpSgdConfig::with_defaults(model.param_dim(), 1.0, kappa, steps, sigma, 3.0, 42);
    cfg.lr_scale = 2.0;
    eprintln!("sigma_dp {sigma:.3}, base lr {:.4}", lr_heuristic(2.0, sigma, 1.0, steps, 2));

    let trace = run_dpsgd(&model, &data, &ElboConfig::new(10, data.len())?, &cfg)?;
    let last = trace.last_variational();
    eprintln!("last iterate: mu {:.3?}, scale {:.3?}", last.mu, last.scales());
    print!("{}", trace.to_csv());
    Ok(())
}
