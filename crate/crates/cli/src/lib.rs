//! Dataset IO, file formats, configuration, and the batch commands behind
//! the `bevbench` binary.

pub mod commands;
pub mod config;
pub mod dataio;

pub use config::{ConfigError, ToolConfig};
pub use dataio::DataIoError;
