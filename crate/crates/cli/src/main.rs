//! `relocsim`: simulate scenarios, analyze traces with both observers,
//! calibrate pools to observations and aggregate run reports.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "relocsim", version, about = "Atomic value-relocation simulator and trace analyzer")]
struct Cli {
    /// Worker threads for commands that run scenarios in parallel.
    #[arg(long, env = "RELOCSIM_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its trace as JSON and DOT.
    Simulate {
        /// Scenario config file, or `builtin:<name>`.
        #[arg(required_unless_present = "all")]
        config: Option<String>,
        /// Run every built-in scenario, one subdirectory each.
        #[arg(long, conflicts_with = "config")]
        all: bool,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compare transfer-layer attribution with execution-layer recovery.
    Analyze {
        /// Trace JSON written by `simulate`.
        trace: PathBuf,
        /// Defaults to the principal of the first recovered migration.
        #[arg(long)]
        principal: Option<String>,
        /// Defaults to the beneficiary of the first recovered migration.
        #[arg(long)]
        beneficiary: Option<String>,
        /// Restrict attribution to one asset symbol.
        #[arg(long)]
        asset: Option<String>,
        /// Parcel size in token units; defaults to automatic quantization.
        #[arg(long)]
        quantum: Option<String>,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Recover pool reserves from observed relocation amounts.
    Calibrate {
        /// Observation JSON file, or `fork_reference`.
        #[arg(long)]
        observations: String,
        /// Write the calibrated pools as JSON here.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = relocsim_core::calibration::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Aggregate the traces of a run directory into report.json and report.txt.
    Report { run_dir: PathBuf },
    /// Run the property suites.
    Selftest {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = relocsim_core::suites::DEFAULT_SEED)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate { config, all, out } => commands::simulate(config.as_deref(), all, &out),
        Command::Analyze {
            trace,
            principal,
            beneficiary,
            asset,
            quantum,
            json,
        } => commands::analyze(&commands::AnalyzeArgs {
            trace,
            principal,
            beneficiary,
            asset,
            quantum,
            json,
        }),
        Command::Calibrate {
            observations,
            out,
            tolerance,
        } => commands::calibrate(&observations, out.as_deref(), tolerance),
        Command::Report { run_dir } => commands::report(&run_dir),
        Command::Selftest { cases, seed } => commands::selftest(cases, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Inconsistent(msg)) => {
            eprintln!("inconsistency: {msg}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
