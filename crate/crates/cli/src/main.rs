//! `onionq` — operator front end for the privacy-preserving sensor
//! query protocol and its simulator.
//!
//! Four subcommands, one job each:
//!
//! * `simulate` — run a seeded experiment campaign from a TOML config
//!   and emit per-query CSV, per-cell summaries, and optional traces.
//! * `query` — bring up an in-process deployment from a TOML file,
//!   issue one request through real circuits, print the merged result.
//! * `adversary` — replay insider or eavesdropper analyses over a
//!   recorded trace and score the findings against ground truth.
//! * `taskasm` — compile the request language to task bytecode, or
//!   disassemble existing bytecode.
//!
//! Exit codes: 0 success, 1 a failure while doing the work, 2 anything
//! wrong with the invocation or its input files.

mod adversary;
mod deploy;
mod query;
mod simulate;
mod taskasm;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// One variant per failure exit code.
pub enum CmdError {
    /// Bad invocation or unusable input file → exit 2.
    Usage(anyhow::Error),
    /// The work itself failed → exit 1.
    Runtime(anyhow::Error),
}

pub fn usage(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Usage(e.into())
}

pub fn runtime(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Runtime(e.into())
}

/// Print to stdout, exiting quietly when the reader has gone away —
/// `onionq ... | head` must end the process, not panic it.
pub fn emit(text: &str) {
    use std::io::Write;
    if std::io::stdout().write_all(text.as_bytes()).is_err() {
        std::process::exit(0);
    }
}

#[derive(Parser)]
#[command(
    name = "onionq",
    version,
    about = "Onion-routed sensor querying: simulator, query issuer, adversary lab, task assembler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation campaign from a config file.
    Simulate(simulate::Args),
    /// Issue one request against a deployment and print the result.
    Query(query::Args),
    /// Replay adversary analyses over a recorded trace.
    Adversary(adversary::Args),
    /// Compile or disassemble task bytecode.
    Taskasm(taskasm::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Query(args) => query::run(args),
        Command::Adversary(args) => adversary::run(args),
        Command::Taskasm(args) => taskasm::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CmdError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
