//! Command-line runner for `softtpr-core`: run configuration, checkpoint
//! and dataset files, report formats and the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datafile;
mod error;
pub mod report;

pub use error::{CliError, Result};
