//! Command-line front end: fitting, prediction, importance, component plots,
//! synthetic benchmarks, and manifest-driven reruns.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{
    cmd_bench, cmd_components, cmd_fit, cmd_importance, cmd_predict, cmd_rerun, execute, Command, Outcome,
};
pub use error::{CliError, Result};
