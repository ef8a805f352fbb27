//! Config-driven experiment runner built on `ottd-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod problem;
pub mod results;
pub mod setup;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
