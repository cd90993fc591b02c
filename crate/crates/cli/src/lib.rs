//! Command-line front end of `zispline`: CSV data, TOML model and grid
//! specifications, JSON reports and a rayon-backed executor.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod format;
pub mod grid;
pub mod parallel;
pub mod report;
pub mod specfile;
pub mod tables;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use config::{Cli, Command};
pub use error::{CliError, Result};
pub use parallel::Rayon;

pub const EXIT_ERROR: i32 = 1;

fn threads_of(command: &Command) -> Option<usize> {
    match command {
        Command::Fit(a) => a.common.threads,
        Command::Cv(a) => a.common.threads,
        Command::Select(a) => a.common.threads,
        Command::Simulate(a) => match &a.study {
            config::StudyArgs::Study1(s) => s.flags.common.threads,
            config::StudyArgs::Study2(s) => s.flags.common.threads,
        },
        Command::Eval(_) | Command::Surrogate(_) => None,
    }
}

fn dispatch<W: Write>(command: &Command, out: &mut W) -> Result<i32> {
    match command {
        Command::Fit(a) => commands::cmd_fit(a, out),
        Command::Eval(a) => commands::cmd_eval(a, out),
        Command::Cv(a) => commands::cmd_cv(a, out),
        Command::Select(a) => commands::cmd_select(a, out),
        Command::Simulate(a) => commands::cmd_simulate(&a.study, out),
        Command::Surrogate(a) => commands::cmd_surrogate(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Tables go to `out`, diagnostics to `err`.
pub fn run_with<I, T, W, E>(args: I, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write + Send,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = write!(if code == 0 { out as &mut dyn Write } else { err }, "{e}");
            return code;
        }
    };
    let result = match threads_of(&cli.command) {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, out)),
            Err(e) => Err(CliError::Config(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli.command, out),
    };
    match result {
        Ok(code) => {
            if code == commands::EXIT_NOT_CONVERGED {
                let _ = writeln!(err, "warning: not converged; reports are flagged");
            }
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}", specfile::single_line(&e.to_string()));
            EXIT_ERROR
        }
    }
}
