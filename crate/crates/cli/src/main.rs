//! `treeloops`: experiments on the random loop model on regular trees.
//!
//! Exit status is 0 when every gate of the command passes, 1 when a gate
//! fails or a run aborts, and 2 on a usage or manifest error.

mod commands;
mod output;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{execute, RunError};
use settings::{Command, Flags, Settings};

#[derive(Parser, Debug)]
#[command(name = "treeloops", version, about = "Random loop model on rooted regular trees")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Closed-form probabilities against Monte Carlo estimates.
    Verify(Flags),
    /// Survival probabilities sigma_1..sigma_m.
    Sigma(Flags),
    /// Bisection bracket of the critical alpha.
    Betac(Flags),
    /// Critical brackets over a grid of u with the second-order curve.
    Curve(Flags),
    /// Pivotal-link estimate of d sigma_m / d beta.
    Pivotal(Flags),
    /// Loop decomposition of a configuration file.
    Decompose(Flags),
    /// Survival estimates against the lower and upper recursions.
    Recursion(Flags),
    /// Runs the command named in a manifest.
    Run(Flags),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (command, flags) = match cli.command {
        Cmd::Verify(f) => (Some(Command::Verify), f),
        Cmd::Sigma(f) => (Some(Command::Sigma), f),
        Cmd::Betac(f) => (Some(Command::Betac), f),
        Cmd::Curve(f) => (Some(Command::Curve), f),
        Cmd::Pivotal(f) => (Some(Command::Pivotal), f),
        Cmd::Decompose(f) => (Some(Command::Decompose), f),
        Cmd::Recursion(f) => (Some(Command::Recursion), f),
        Cmd::Run(f) => (None, f),
    };
    let settings = match Settings::resolve(command, &flags) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&settings) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("a gate failed (seed {})", settings.seed);
            ExitCode::from(1)
        }
        Err(RunError::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
