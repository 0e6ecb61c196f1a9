//! Command-line front end for `devnoise-core`: seeded JSON configs, CSV and
//! JSON artifacts, checkpoints, and parallel experiment sweeps.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use commands::{run, Invocation, Manifest};
pub use error::{CliError, Result};
