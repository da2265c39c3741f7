//! Command-line front end: problem files, solver runs and exported curves.

pub mod commands;
pub mod output;
pub mod schema;

pub use commands::{run, Cli, CliError, Command, RunConfig};
