//! Runs a preset config end to end, as `nadpvi run` does.
//!
//! `cargo run --release --example run_preset -- crates/core/presets/desk/expfam_m2.toml`

use nadpvi::experiment::{run_experiment_file, RunOverrides};

fn main() -> nadpvi::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/presets/desk/expfam_m2.toml").into());
    let overrides = RunOverrides {
        out_dir: Some(std::env::temp_dir().join("nadpvi-example")),
        ..Default::default()
    };
    let r = run_experiment_file(&path, &overrides)?;
    println!(
        "sigma_dp {:.4}, effective lr {:.4?}",
        r.manifest.sigma_dp, r.manifest.effective_lr
    );
    for m in &r.summary.methods {
        println!(
            "{:<8} {} rmse {:.4} ± {:.4}",
            m.method, r.summary.metric, m.mean_rmse, m.sd_rmse
        );
    }
    println!("artifacts in {}", r.output_dir.display());
    Ok(())
}
