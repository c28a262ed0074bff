//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrm_core::simulate::Measure;

use crate::config::{self, Overrides};
use crate::pipeline::{self, Context, RunError, Runner};
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "lrm", version, about = "Locally risk-minimizing hedging of unit-linked life insurance under partial information")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate asset, factor, survival and death paths.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Measure to simulate under.
        #[arg(long, value_enum, default_value_t = MeasureArg::P)]
        measure: MeasureArg,
    },
    /// Solve the backward problems and cross-check them by Monte Carlo.
    Solve(Common),
    /// Run the particle filter along simulated price paths.
    Filter(Common),
    /// Backtest the optimal strategy under partial information.
    Hedge(Common),
    /// Run every acceptance criterion; exits nonzero when any fails.
    Verify(Common),
    /// Closed-form strategies for an uncorrelated model.
    ClosedForm(Common),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    P,
    PHat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file (TOML).
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of simulated paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Number of filter particles.
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Suppress progress output.
    #[arg(long)]
    pub quiet: bool,
    /// Worker threads; defaults to the number of cores. Outputs do not
    /// depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, paths: self.paths, particles: self.particles }
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &Command) -> Result<(), RunError> {
    let common = match command {
        Command::Simulate { common, .. } => common,
        Command::Solve(c) | Command::Filter(c) | Command::Hedge(c) | Command::Verify(c) | Command::ClosedForm(c) => c,
    };
    let config = config::load(&common.config, common.overrides())?;
    let runner = Runner::new(common.workers);
    let ctx = Context::new(config, &common.out_dir, &runner, common.quiet)?;
    match command {
        Command::Simulate { measure, .. } => {
            let m = match measure {
                MeasureArg::P => Measure::P,
                MeasureArg::PHat => Measure::PHat,
            };
            pipeline::simulate(&ctx, m)?;
        }
        Command::Solve(_) => {
            pipeline::solve(&ctx)?;
        }
        Command::Filter(_) => {
            pipeline::filter(&ctx)?;
        }
        Command::Hedge(_) => {
            let (_, report) = pipeline::hedge(&ctx)?;
            if !common.quiet {
                println!("{}", pipeline::summary_csv(&report));
            }
        }
        Command::ClosedForm(_) => {
            pipeline::closed_form(&ctx, Path::new(&common.config))?;
        }
        Command::Verify(_) => {
            let results = verify::verify(&ctx)?;
            let failed: Vec<String> = results.iter().filter(|r| !r.pass()).map(|r| format!("C{}", r.id)).collect();
            if !failed.is_empty() {
                return Err(RunError::VerifyFailed(failed.join(", ")));
            }
        }
    }
    Ok(())
}
