//! Library side of the `hwdm` command: configuration, manifests, the
//! synthetic data generator and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod manifest;
pub mod synth;

pub use config::{Preset, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::Manifest;
