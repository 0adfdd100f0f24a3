//! `difface`: dataset generation, training, restoration and analysis.
//!
//! Successful commands print a JSON summary on stdout. Failures print
//! `{"error": {"category", "code", "message"}}` on stderr and exit with
//! 2 (configuration), 3 (data) or 4 (numeric).

mod args;
mod commands;
mod error;
mod plot;

use std::io::Write;

use clap::Parser;

use args::Cli;

fn main() {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("json value");
            // a closed pipe on stdout is not a failure of the command
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
