//! Command-line driver for the reconstruction toolkit: configuration,
//! subcommand pipelines and file output.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Config, Method};
pub use error::CliError;
