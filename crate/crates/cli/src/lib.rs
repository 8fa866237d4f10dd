//! Command-line front end for the reconverge simulator.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation or parse error,
//! 3 audit failure.

pub mod audit;
pub mod compare;
pub mod config;
pub mod error;
pub mod gen;
pub mod run;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub use audit::{cmd_audit, AuditArgs};
pub use compare::{cmd_compare, CompareArgs};
pub use error::{CliError, CliResult};
pub use gen::{cmd_gen, GenArgs};
pub use run::{cmd_run, RunArgs, THREADS_ENV};

#[derive(Parser, Debug)]
#[command(name = "reconverge", version, about = "Merge point predictor simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic workload and its ground-truth sidecar.
    Gen(GenArgs),
    /// Simulate models under one or more policies and score them.
    Run(RunArgs),
    /// Side-by-side metrics of finished runs.
    Compare(CompareArgs),
    /// Re-check correct merge predictions of finished runs against the oracle.
    Audit(AuditArgs),
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => {
            let (m, t) = cmd_gen(&a)?;
            println!("{}\n{}", m.display(), t.display());
        }
        Command::Run(a) => print!("{}", cmd_run(&a)?),
        Command::Compare(a) => {
            let text = cmd_compare(&a)?;
            if a.out.is_none() {
                print!("{text}");
            }
        }
        Command::Audit(a) => {
            let (text, violations) = cmd_audit(&a)?;
            print!("{text}");
            if violations > 0 {
                return Err(CliError::Audit(violations));
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
