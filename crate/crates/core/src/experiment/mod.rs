//! Config-driven experiment runs, UCI Adult ingestion and artifact output.

mod adult;
mod config;
mod pipeline;
mod runner;

pub use adult::{
    ingest_adult, ingest_adult_text, parse_income, read_dataset_csv, write_dataset_csv, AdultData, FeatureManifest, ADULT_COLUMNS,
};
pub use config::{
    DataSection, DpSgdSection, EvaluationSection, ExperimentConfig, ExperimentKind, ExperimentSection, ModelSection,
    PostprocessSection, PrivacySection, CONFIG_REFERENCE,
};
pub use pipeline::{Pipeline, PipelineOutput, PipelineSettings};
pub use runner::{
    emit_plotdata, exit_code, run_experiment, run_experiment_file, MethodSummary, RunManifest, RunOverrides, RunResult,
    RunSummary, METHODS,
};
