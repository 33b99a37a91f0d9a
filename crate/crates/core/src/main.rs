use std::process::ExitCode;

use clap::Parser;
use kfp_core::cli_io::{run_command, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code.clamp(1, 255) as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
