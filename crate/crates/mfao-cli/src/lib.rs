//! Experiment runner for `mfao`: configuration, subcommands and the run manifest.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{Run, Status};
pub use config::ExperimentConfig;
