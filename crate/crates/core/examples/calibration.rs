//! Predictive calibration of NA-DPVI and the last iterate on synthetic
//! logistic-regression data.
//!
//! `cargo run --example calibration`

use nadpvi::evaluation::calibration_curve;
use nadpvi::experiment::{Pipeline, PipelineSettings};
use nadpvi::models::{make_logistic_regression, Model};
use nadpvi::postprocess::{posterior_predictive_logistic, LaplaceOptions, Method};
use nadpvi::rng::rng_from_seed;

fn main() -> nadpvi::Result<()> {
    let model = make_logistic_regression(5)?;
    let mut rng = rng_from_seed(4);
    let theta = model.prior_sample(&mut rng);
    let train = model.simulate(&mut rng, &theta, 2000);
    let test = model.simulate(&mut rng, &theta, 1000);

    let pipeline = Pipeline::new(PipelineSettings {
        epsilon: 1.0,
        delta: 1e-5,
        steps: 2000,
        sampling_rate: 0.1,
        clip_norm: 5.0,
        beta_u: 10.0,
        lr_scale: 6f64.sqrt(),
        n_vi: 10,
        method: Method::Laplace,
        burn_in: None,
        warmup: 500,
        draws: 1000,
        chains: 1,
        laplace: LaplaceOptions::default(),
        estimate_sigma_sub: false,
    })?;
    let out = pipeline.run(&model, &train, 8)?;
    let labels: Vec<bool> = test.iter().map(|e| e.y == 1.0).collect();
    for (name, post) in [("na_dpvi", &out.na_dpvi), ("naive", &out.naive)] {
        let preds: Vec<f64> = test
            .iter()
            .map(|e| posterior_predictive_logistic(post, &model, &e.x, &mut rng, 500))
            .collect();
        let report = calibration_curve(&preds, &labels, 10)?;
        println!("{name}: rmse {:.4}", report.rmse);
        print!("{}", report.to_csv());
    }
    Ok(())
}
