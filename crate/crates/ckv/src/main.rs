use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ckv::cli::Cli::parse();
    match ckv::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
