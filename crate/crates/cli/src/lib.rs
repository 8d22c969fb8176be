//! Command-line front end: argument parsing, fit/simulate/oracle/compare
//! commands, file exporters and the run manifest.

pub mod args;
pub mod commands;
pub mod export;
pub mod manifest;

use args::{Cli, Command};
use commands::Log;

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> gcgm_core::Result<()> {
    let log = Log { quiet: cli.quiet };
    match &cli.command {
        Command::Fit(a) => commands::cmd_fit(a, log).map(|_| ()),
        Command::Simulate(a) => commands::cmd_simulate(a, log),
        Command::Oracle(a) => commands::cmd_oracle(a, log).map(|_| ()),
        Command::Compare(a) => commands::cmd_compare(a, log).map(|_| ()),
    }
}
