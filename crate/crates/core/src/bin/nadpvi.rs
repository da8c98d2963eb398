use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nadpvi::accountant::{calibrate_sigma, epsilon_of, PrivacyBudget};
use nadpvi::experiment::{exit_code, ingest_adult, run_experiment_file, RunOverrides, CONFIG_REFERENCE};

#[derive(Parser)]
#[command(name = "nadpvi", version, about = "Noise-aware DP variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run {
        /// TOML experiment config
        config: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides experiment.output_dir
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides experiment.seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode raw UCI Adult files into train.csv, test.csv and features.json.
    IngestAdult { raw: PathBuf, out: PathBuf },
    /// Print the noise multiplier that meets (eps, delta).
    Accountant {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        kappa: f64,
    },
    /// Print every config key with its default.
    ConfigReference,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            workers,
            out_dir,
            seed,
        } => run_experiment_file(&config, &RunOverrides { workers, out_dir, seed }).map(|r| {
            for m in &r.summary.methods {
                println!(
                    "{:<8} {} rmse {:.4} ± {:.4}",
                    m.method, r.summary.metric, m.mean_rmse, m.sd_rmse
                );
            }
            println!(
                "na_dpvi better in {}/{} repetitions; artifacts in {}",
                r.summary.na_dpvi_better,
                r.summary.repetitions,
                r.output_dir.display()
            );
        }),
        Command::IngestAdult { raw, out } => ingest_adult(&raw, &out).map(|m| {
            println!(
                "{} features, {} train rows ({} dropped), {} test rows ({} dropped)",
                m.feature_count, m.train_rows, m.dropped_train_rows, m.test_rows, m.dropped_test_rows
            );
        }),
        Command::Accountant {
            eps,
            delta,
            steps,
            kappa,
        } => PrivacyBudget::new(eps, delta)
            .and_then(|b| calibrate_sigma(b, steps, kappa))
            .and_then(|sigma| {
                let achieved = epsilon_of(sigma, delta, steps, kappa)?;
                println!("sigma_dp = {sigma}");
                eprintln!("achieved epsilon = {achieved}");
                Ok(())
            }),
        Command::ConfigReference => {
            print!("{CONFIG_REFERENCE}");
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
