//! Noise calibration for Poisson-subsampled DP-SGD.
//!
//! `cargo run --example accountant`

use nadpvi::accountant::{calibrate_sigma, epsilon_of, PrivacyBudget};

fn main() -> nadpvi::Result<()> {
    let (steps, kappa) = (2000, 0.1);
    println!("{:>6} {:>10} {:>10}", "eps", "sigma_dp", "achieved");
    for eps in [0.1, 0.3, 1.0, 3.0] {
        let sigma = calibrate_sigma(PrivacyBudget::new(eps, 1e-5)?, steps, kappa)?;
        println!("{eps:>6} {sigma:>10.4} {:>10.5}", epsilon_of(sigma, 1e-5, steps, kappa)?);
    }

    // epsilon spent so far at a fixed noise level
    let sigma = 2.0;
    for t in [1, 10, 100, 1000, 10_000] {
        println!("sigma {sigma}, T = {t:>5}: eps = {:.3}", epsilon_of(sigma, 1e-5, t, kappa)?);
    }
    Ok(())
}
