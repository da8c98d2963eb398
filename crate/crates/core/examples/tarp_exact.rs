//! TARP expected coverage of the exact conjugate posterior, which should sit on
//! the diagonal C(α) = 1 − α.
//!
//! `cargo run --example tarp_exact`

use nadpvi::evaluation::{tarp_coverage, PosteriorSampler, TarpConfig};
use nadpvi::models::{make_beta_bernoulli, ConjugatePosterior, Diffeomorphism, Model};
use nadpvi::rng::Rng;

struct Exact {
    post: ConjugatePosterior,
    transform: Diffeomorphism,
}

impl PosteriorSampler for Exact {
    fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        self.transform.forward(&self.post.sample(rng))
    }
}

fn main() -> nadpvi::Result<()> {
    let model = make_beta_bernoulli(2.0, 2.0)?;
    let cfg = TarpConfig::new(500, 1000, 1);
    let report = tarp_coverage(
        &model,
        100,
        |data: &[u8], _| {
            Ok(Exact {
                post: model.exact_posterior(data),
                transform: model.transform().clone(),
            })
        },
        &cfg,
    )?;
    print!("{}", report.to_csv());
    eprintln!("rmse {:.4} over K = {}", report.rmse, report.repetitions);
    Ok(())
}
