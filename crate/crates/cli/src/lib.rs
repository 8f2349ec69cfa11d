//! Command-line front end for `persearch-core`: configuration, file formats
//! and the `gen-data`, `train`, `eval`, `ablate` and `report` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;

pub use config::Config;
pub use error::{CliError, Result};
