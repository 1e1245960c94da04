use clap::Parser;
use std::process::ExitCode;

mod cli;
mod plot;
mod scenario_file;
mod selftest;

fn main() -> ExitCode {
    cli::dispatch(cli::Cli::parse())
}
