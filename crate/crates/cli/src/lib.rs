//! Configuration, pipeline orchestration and artifact output for the
//! `cmanifold` command-line tool.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{Config, Overrides};
pub use error::{CliError, CliResult};
pub use pipeline::{exit_status, run, Command, Manifest, Outcome};
