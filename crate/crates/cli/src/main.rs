use std::process::ExitCode;

use clap::Parser;
use medrag_cli::cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match medrag_cli::commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
