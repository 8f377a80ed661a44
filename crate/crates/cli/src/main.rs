use std::process::ExitCode;

use clap::Parser;
use ocpec_bench::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli, &mut std::io::stdout().lock()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
