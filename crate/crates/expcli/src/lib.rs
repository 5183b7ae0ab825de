//! Experiment runner for the IMA nonlinear ICA experiments: suite configs,
//! resumable cell execution on a worker pool, CSV and plot-spec output, and
//! the acceptance checks.

pub mod acceptance;
pub mod cells;
pub mod checks;
pub mod config;
pub mod error;
pub mod exact;
pub mod plotspec;
pub mod runner;
pub mod suites;

pub use error::{CliError, Result};
