//! Command-line front end for hbtsim.
//!
//! Experiments are described by TOML configs (see [`config`]); the
//! subcommands in [`commands`] simulate click streams, correlate them, fit
//! models and assemble [`report::Report`]s.

pub mod commands;
pub mod config;
pub mod files;
pub mod pipeline;
pub mod report;

pub use commands::{main_with_args, CliError};
pub use config::{ExperimentConfig, Preset};
pub use report::{Quantity, Report};
