//! Library side of the `flamelab` binary: run configurations, manifests,
//! the pipeline commands and the shipped presets.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod presets;
pub mod svg;

pub use error::{CliError, CliResult};
