//! File formats, configuration and subcommands of the `bggm` tool.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod io;

pub use error::{CliError, Result};
