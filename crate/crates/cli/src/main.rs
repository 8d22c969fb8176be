use std::process::ExitCode;

use clap::Parser;
use gcgm_cli::args::Cli;
use gcgm_cli::commands::error_json;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match gcgm_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
