use std::process::ExitCode;

use clap::Parser;
use eot_cli::Cli;

fn main() -> ExitCode {
    ExitCode::from(eot_cli::commands::main_with(Cli::parse()))
}
