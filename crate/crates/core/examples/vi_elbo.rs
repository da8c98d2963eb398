//! Per-example ELBO terms and their reparameterized gradients.
//!
//! `cargo run --example vi_elbo`

use nadpvi::models::{make_gamma_exponential, Model};
use nadpvi::rng::rng_from_seed;
use nadpvi::vi::{mc_elbo, ElboEvaluator, NoiseDraws, VariationalParams};

fn main() -> nadpvi::Result<()> {
    let model = make_gamma_exponential(2.0, 2.0)?;
    let mut rng = rng_from_seed(1);
    let data = model.simulate(&mut rng, &[1.5], 500);

    let eps = NoiseDraws::sample(&mut rng, 10, model.param_dim());
    for mu in [-1.0, 0.0, 1.0, 1.5] {
        let q = VariationalParams::with_scale(vec![mu], 0.1);
        let ev = ElboEvaluator::new(&model, &q, &eps, data.len())?;
        // the per-example losses sum to the negative ELBO
        let total: f64 = data.iter().map(|x| ev.loss(x)).sum::<nadpvi::Result<f64>>()?;
        let grad = ev.grad(&data[0])?;
        println!(
            "mu {mu:>5}: -sum loss {:>10.3}  elbo {:>10.3}  grad(x_0) {grad:.3?}",
            -total,
            mc_elbo(&model, &q, &data, &eps)
        );
    }
    Ok(())
}
