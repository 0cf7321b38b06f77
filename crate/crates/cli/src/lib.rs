//! Library side of the `oica` command-line tool: file formats, CIFAR-10
//! ingestion, config resolution, manifests and the subcommands.

pub mod cifar;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod plot;

pub use error::CliError;
