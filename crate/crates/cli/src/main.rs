use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = lutcore_cli::Cli::parse();
    match lutcore_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
