//! Command-line harness: configuration, model persistence glue and the
//! `fit`, `evolve`, `sweep`, `baseline` and `export` commands.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{RunConfig, SweepGrid, TargetSelection};
pub use error::CliError;
