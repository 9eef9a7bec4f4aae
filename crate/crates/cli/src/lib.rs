//! Command-line pipeline around the BSAT tokenizer and forecaster.
//!
//! [`commands::run`] parses an argument vector and runs one subcommand,
//! which keeps the binary thin and lets tests drive commands in-process.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod svg;

pub use config::RunConfig;
pub use error::{CliError, Result};
