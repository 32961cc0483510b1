//! File formats and subcommands of the `l3` command-line tool.

pub mod commands;
pub mod config;
mod error;
pub mod files;
pub mod trajectory_csv;

pub use error::{CliError, Result};
