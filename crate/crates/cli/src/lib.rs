//! Command-line pipeline for unsupervised domain-adaptation dictionary learning:
//! synthetic data generation, adaptation, evaluation and reporting.

pub mod commands;
pub mod config;
pub mod error;
pub mod model;
pub mod report;

pub use commands::{
    cmd_adapt, cmd_eval, cmd_pipeline, cmd_synth, domain_moment_check, run_pipeline,
};
pub use config::{Baseline, EvalOptions, PipelineConfig};
pub use error::{CliError, CliResult};
pub use model::AdaptedModel;
pub use report::{MethodResult, TrialReport};
