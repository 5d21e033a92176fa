//! `cohdec` command-line front end.
//!
//! Exit codes: 0 success, 1 failed verification or degenerate samples,
//! 2 invalid model, 3 work budget exceeded, 64 usage, 65 malformed input,
//! 74 I/O failure.

mod args;
mod commands;
mod matrix;
mod report;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use cohdec::Error;

use args::{Cli, Command, ConfigError};

const EXIT_FAIL: u8 = 1;
const EXIT_MODEL: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_IO: u8 = 74;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotHermitian { .. }
        | Error::NotPositive { .. }
        | Error::SingularSignal { .. }
        | Error::UnsupportedNoise
        | Error::DimensionMismatch { .. } => EXIT_MODEL,
        Error::BudgetExceeded { .. } => EXIT_BUDGET,
        Error::InvalidArgument(_)
        | Error::InvalidGrid(_)
        | Error::InvalidSpace(_)
        | Error::InvalidMode { .. }
        | Error::OutsideGrid
        | Error::SpaceMismatch => EXIT_USAGE,
        Error::Parse { .. } => EXIT_DATA,
        Error::Io(_) => EXIT_IO,
        Error::DegenerateSamples => EXIT_FAIL,
    }
}

fn run() -> u8 {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match args::expand_config(argv) {
        Ok(a) => a,
        Err(ConfigError::Io(m)) => {
            eprintln!("error: {m}");
            return EXIT_IO;
        }
        Err(ConfigError::Parse { line, message }) => {
            eprintln!("error: config line {line}: {message}");
            return EXIT_DATA;
        }
        Err(ConfigError::Usage(m)) => {
            eprintln!("error: {m}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };

    let result = match &cli.command {
        Command::Capacity(a) => commands::capacity(a),
        Command::Verify(a) => commands::verify(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Rate(a) => commands::rate(a),
    };
    match result {
        Ok(report) => {
            print!("{}", report.render(cli.format));
            if report.all_pass() {
                0
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run())
}
