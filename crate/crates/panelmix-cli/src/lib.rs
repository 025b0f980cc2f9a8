//! Command-line front end: CSV ingestion, run configuration, and the
//! `fit`, `select`, `ranktest` and `simulate` workflows.

pub mod cli;
pub mod commands;
pub mod config;
pub mod ingest;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Invalid flags or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Input data that cannot be used.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataError {}

/// Exit code of a failed run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>() || cause.is::<csv::Error>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<panelmix::Error>() {
            return match e.root() {
                _ if e.is_numerical() => EXIT_NUMERICAL,
                panelmix::Error::InvalidData(_)
                | panelmix::Error::Dimension(_)
                | panelmix::Error::DegeneratePartition(_) => EXIT_DATA,
                _ => EXIT_USAGE,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

/// Parse `args` (including the program name), run the command and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match cli::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let json_errors = cli.command.common().json_errors;
    let name = cli.command.name();
    match commands::execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            if json_errors {
                let msg = serde_json::json!({ "command": name, "error": format!("{e:#}"), "exit_code": code });
                println!("{msg}");
            } else {
                eprintln!("error: {e:#}");
            }
            code
        }
    }
}
