//! `cogmac`: analysis, design and simulation of non-intrusive secondary
//! access from the command line.
//!
//! Exit codes: 0 success, 1 validation disagreement, 2 usage, 3 model
//! domain (unstable or infeasible parameters), 4 I/O.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, Overrides};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Model(cogmac_core::Error),
    Io(String),
}

impl From<cogmac_core::Error> for CliError {
    fn from(e: cogmac_core::Error) -> Self {
        if e.is_model_domain() {
            CliError::Model(e)
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Model(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Model(e) => write!(f, "model error: {e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cogmac", version, about = "Non-intrusive secondary access: analysis, design, simulation")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Closed-form metrics of one protocol.
    Analyze(Overrides),
    /// P_s, T_col and C_s over a (q, r) grid.
    Contour(Overrides),
    /// Best protocol, with the collision cap when gamma or eta is set.
    Optimize(Overrides),
    /// Optimize along one parameter axis.
    Sweep(Overrides),
    /// Slot-level simulation.
    Simulate(Overrides),
    /// Simulation against the analysis, with z-scores.
    Validate(Overrides),
    /// Run whatever command the config file names.
    Run(Overrides),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match &cli.command {
        Sub::Analyze(o) => (Some(Command::Analyze), o),
        Sub::Contour(o) => (Some(Command::Contour), o),
        Sub::Optimize(o) => (Some(Command::Optimize), o),
        Sub::Sweep(o) => (Some(Command::Sweep), o),
        Sub::Simulate(o) => (Some(Command::Simulate), o),
        Sub::Validate(o) => (Some(Command::Validate), o),
        Sub::Run(o) => (None, o),
    };
    if command.is_none() && flags.config.is_none() {
        eprintln!("usage error: `run` needs --config");
        return ExitCode::from(2);
    }
    let result = flags.resolve(command).and_then(|rc| commands::execute(&rc));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation: at least one |z| exceeds 3");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
