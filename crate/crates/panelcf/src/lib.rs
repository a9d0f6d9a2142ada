//! File formats, configuration and the command-line front end for `panelcf-core`.
//!
//! The binary reads a run configuration, executes one subcommand and writes CSV/JSON
//! artifacts. Every artifact records the configuration hash and the master seed.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod parallel;

pub use config::RunConfig;
pub use error::{AppError, AppResult};

/// Printed by `--version`.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)");
