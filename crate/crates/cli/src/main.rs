//! `rasp`: design, evaluate and apply Bayesian acceptance sampling plans for
//! interval-censored competing-risks life tests.

mod commands;
mod config;
mod error;
mod plan;
mod report;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::SimulateArgs;
use crate::config::RunConfig;
use crate::error::{input, Result};
use crate::plan::{DecisionKind, PlanArgs};
use crate::report::emit;

#[derive(Parser)]
#[command(
    name = "rasp",
    version,
    about = "Bayesian acceptance sampling plans for interval-censored competing-risks tests"
)]
struct Cli {
    /// Worker threads for searches and simulations (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for the plan of least Bayes risk.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = DecisionKind::Bayes)]
        decision: DecisionKind,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bayes risk and operating characteristics of a given plan.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        decision: Option<DecisionKind>,
        #[command(flatten)]
        plan: PlanArgs,
        /// Reliability threshold; chosen to minimise the risk when omitted.
        #[arg(long)]
        r0: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accept or reject a lot from observed failure counts.
    Decide {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        decision: Option<DecisionKind>,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        r0: Option<f64>,
        /// CSV with header `interval,cause_1,...,cause_J`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo operating characteristics of a plan and rule.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        decision: Option<DecisionKind>,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        r0: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fixed cause-specific rates instead of prior draws, comma separated.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the reference design tables as CSV.
    Tables {
        /// Table number 1 to 8, or `all`.
        #[arg(long, default_value = "all")]
        which: String,
        /// Directory holding example1.json and example2.json (bundled copies otherwise).
        #[arg(long)]
        config_dir: Option<PathBuf>,
        /// Directory for table_<n>.csv files; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| input(format!("cannot start {t} threads: {e}")))?;
    }
    match cli.command {
        Command::Design {
            config,
            decision,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let r = commands::design(decision, &cfg)?;
            emit(&r, &r.summary(), out.as_deref(), &cfg.outputs)
        }
        Command::Evaluate {
            config,
            decision,
            plan,
            r0,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let r = commands::evaluate(&cfg, decision, r0, plan.resolve()?)?;
            emit(&r, &r.summary(), out.as_deref(), &cfg.outputs)
        }
        Command::Decide {
            config,
            decision,
            plan,
            r0,
            data,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let r = commands::decide(&cfg, decision, r0, plan.resolve()?, &data)?;
            emit(&r, &r.summary(), out.as_deref(), &cfg.outputs)
        }
        Command::Simulate {
            config,
            decision,
            plan,
            r0,
            reps,
            seed,
            rates,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let r = commands::simulate(
                &cfg,
                decision,
                r0,
                plan.resolve()?,
                SimulateArgs { reps, seed, rates },
            )?;
            emit(&r, &r.summary(), out.as_deref(), &cfg.outputs)
        }
        Command::Tables {
            which,
            config_dir,
            out,
        } => tables::run(&which, config_dir.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
