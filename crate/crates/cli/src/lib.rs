//! Command-line entry points and the diagnostic annotation service.

pub mod commands;
pub mod error;
pub mod service;

pub use error::{CliError, CliResult};
