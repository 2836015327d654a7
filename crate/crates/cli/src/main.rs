//! `spancrf`: train, apply, and inspect span-aware CRF taggers.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or check
//! failure. Failures print one diagnostic line to stderr.

mod commands;
mod opts;

use clap::Parser;

fn main() {
    let cli = match opts::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version land here too; they are not failures.
            let is_usage_error = err.use_stderr();
            let _ = err.print();
            std::process::exit(if is_usage_error { 1 } else { 0 });
        }
    };
    if let Err(failure) = commands::run(cli.command) {
        eprintln!("spancrf: {}", failure.message());
        std::process::exit(failure.code());
    }
}
