//! Experiment runner for symmetry teleportation: IDX ingestion, TOML configs, CSV and JSON output.

pub mod config;
pub mod data;
pub mod error;
pub mod idx;
pub mod output;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{ExpError, Result};
pub use runner::run;
