//! Batch front end for the rolling tactile sensor pipelines: configuration,
//! frame I/O, subcommands and reports.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod coverage;
pub mod error;
pub mod io;
pub mod report;

pub use commands::{run, Command};
pub use config::RunConfig;
pub use error::CliError;
