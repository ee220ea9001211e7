//! Experiment runner for the cPG time discretization: convergence sweeps,
//! energy audits and single runs, written as CSV or JSON tables.

pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use runner::{run_experiment, write_output};
