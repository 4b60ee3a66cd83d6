//! Command-line driver: run configuration, subcommands and exit codes.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Preset, RunConfig};
pub use error::{CliError, CliResult};
