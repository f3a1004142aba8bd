use std::process::ExitCode;

use clap::Parser;
use dpd_core::cli::{error_line, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(cli.command.name(), &e));
            ExitCode::FAILURE
        }
    }
}
