//! Command-line orchestration of the pan-sharpening toolkit: data
//! simulation, training, sharpening, evaluation and ablations.

pub mod app;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use manifest::RunManifest;
