//! Command-line driver: configuration, run directories with an append-only
//! manifest, and one command per pipeline stage.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod stages;

pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};
pub use manifest::{RunDir, RunManifest};
