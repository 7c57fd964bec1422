//! Experiment runner: configuration files, subcommands and artifact output.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, RunOutcome};
pub use config::ExperimentConfig;
pub use error::CliError;
