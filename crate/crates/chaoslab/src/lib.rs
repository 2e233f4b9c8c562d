//! Experiment harness around `chaoslab-core`: TOML configuration, run
//! orchestration, file formats and the run manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod pipeline;

pub use config::{parse_config, parse_config_for, ConfigError, ExperimentConfig, ExperimentKind};
pub use error::{exit, AppError, AppResult};
pub use pipeline::{execute, Outcome};
