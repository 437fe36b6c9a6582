//! Experiment runner for count-regularized online preference optimization
//! on synthetic contextual bandits.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Outcome};
pub use config::{Command, ExperimentConfig};
pub use error::{CliError, Result};
