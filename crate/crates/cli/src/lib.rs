//! Config-driven experiment harness around `fockforge-core`.

pub mod config;
pub mod error;
pub mod experiments;
pub mod pipeline;
pub mod report;

pub use config::{parse, ConfigError, ExperimentConfig, Kind};
pub use error::RunError;
pub use experiments::{run, Quantity, RunOutput};
