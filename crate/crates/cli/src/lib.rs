//! Batch runner for `cavity-unravel` experiments.
//!
//! A run is described by one TOML file. `run` validates it, runs it and
//! writes a CSV plus a `.manifest.toml` that can be fed back as a config.

pub mod config;
pub mod error;
pub mod run;

pub use config::{Experiment, ExperimentConfig};
pub use error::CliError;
pub use run::{execute, resolve, run_experiment, validate, RunOutput, RunPaths};
