//! Experiment driver: declarative configs, run directories with manifests,
//! and one command per experiment verb.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod samples;

pub use error::{CliError, Result};
