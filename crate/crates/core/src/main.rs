//! Binary entry point: parse flags, run the experiment, report artifacts.
//!
//! Success prints the written file paths, one per line. Failures print a
//! machine-readable JSON error record to stderr and exit with 2 for
//! usage/configuration problems or 3 for numeric failures.

use std::process::ExitCode;

use clap::Parser;

use erm_landscape::cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.execute() {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = serde_json::json!({
                "error": {
                    "message": e.to_string(),
                    "exit_code": e.exit_code(),
                }
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
