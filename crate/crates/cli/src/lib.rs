//! Command-line front end: config ingestion, solver dispatch, simulation,
//! the verification suite and example export.

pub mod commands;
pub mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Exit status of a command that did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// A checked property did not hold (exit 1).
    Property(String),
    /// Bad arguments, config or input files (exit 2).
    Config(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Property(_) => 1,
            Self::Config(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Property(name) => write!(f, "property failed: {name}"),
            Self::Config(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::Config(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "usedrop", version, about = "Transmission policies for remote estimation over use-dependent packet-drop channels")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulation and sweep seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo trials; overrides the config.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Error-grid points; overrides the config.
    #[arg(long, global = true)]
    pub grid_points: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the symmetric-policy dynamic program and check its structure.
    SolveSymmetric,
    /// Solve the white-source (a = 0) interval-policy dynamic program.
    SolveIid,
    /// Simulate a stored policy.
    Simulate {
        /// Policy CSV; a sibling `<stem>_grid.csv` is read when present.
        #[arg(long)]
        policy: PathBuf,
        /// Also write a per-stage trace for this many leading trials.
        #[arg(long, default_value_t = 0)]
        trace: usize,
    },
    /// Run the property suite; exit 0 iff every property holds.
    Verify {
        /// Corrupt one value-table entry before the structure check.
        #[arg(long)]
        inject_defect: bool,
        /// Random small-drop instances in the threshold sweep.
        #[arg(long, default_value_t = 50)]
        sweep: usize,
        /// Random discrete instances in the oracle comparison.
        #[arg(long, default_value_t = 100)]
        oracle_instances: usize,
    },
    /// Write example configs and plot-ready threshold tables for the two
    /// reference channels.
    ExportExamples,
}

/// Runs one command, printing progress to stdout.
pub fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::SolveSymmetric => commands::solve_symmetric(&cli),
        Command::SolveIid => commands::solve_iid(&cli),
        Command::Simulate { policy, trace } => commands::simulate(&cli, policy, *trace),
        Command::Verify { inject_defect, sweep, oracle_instances } => {
            let opts = verify::SuiteOptions {
                seed: cli.seed.unwrap_or(1),
                grid_points: cli.grid_points.unwrap_or(2001),
                sweep: *sweep,
                oracle_instances: *oracle_instances,
                trials: cli.trials.unwrap_or(100_000),
                inject_defect: *inject_defect,
            };
            let report = verify::run_suite(&opts)?;
            for p in &report.properties {
                println!("{} {}: {}", if p.passed { "PASS" } else { "FAIL" }, p.name, p.detail);
            }
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("verify_report.json"), serde_json::to_string_pretty(&report)?)?;
            }
            match report.first_failure() {
                Some(name) => Err(Failure::Property(name.to_string())),
                None => Ok(()),
            }
        }
        Command::ExportExamples => commands::export_examples(&cli),
    }
}
