//! `ptnas`: search, select, bench, analyze and verify from the command line.
//! Any `--<section>.<key> <value>` flag overrides the configuration; see
//! [`config`] for the keys.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ptnas::selection::SelectMethod;

mod commands;
mod config;
mod error;

use commands::{analyze, bench, search, select, verify};
use config::{extract_overrides, Config};
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "ptnas", version, about = "Differentiable architecture search on toy data")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a supernet with bilevel optimization.
    Search,
    /// Derive a genotype from a trained supernet.
    Select {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `mag`, `pt` or `pt-mag`; defaults to `select.method`.
        #[arg(long)]
        method: Option<String>,
        /// Report the genotype's accuracy from this bench database.
        #[arg(long)]
        bench: Option<PathBuf>,
    },
    /// Train every genotype of the space from scratch (resumable).
    Bench,
    /// Diagnostics on trained supernets and feature samples.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Self-checks: gradients, the closed-form θ and run determinism.
    Verify {
        /// Subset of `gradcheck`, `prop1-oracle`, `determinism`.
        checks: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
enum Analyze {
    /// Optimal skip/conv mixing weights from samples or a checkpoint.
    Prop1 {
        #[arg(long, conflicts_with = "checkpoint")]
        samples: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0.001)]
        step: f64,
    },
    /// Skip-vs-conv α gap over a search run.
    SkipGap {
        #[arg(long)]
        log: PathBuf,
    },
    /// Accuracy after random edge swaps, next to a plain chain.
    Shuffle(ShuffleArgs),
    /// Softmax α against measured op strength.
    AlphaVsStrength {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated edge indices; three random edges by default.
        #[arg(long, value_delimiter = ',')]
        edges: Vec<usize>,
    },
    /// Selection quality over the checkpoints of one search run.
    Trajectory {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long, value_delimiter = ',')]
        epochs: Vec<usize>,
    },
}

#[derive(Args, Debug)]
struct ShuffleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 4)]
    chain_depth: usize,
}

fn method(cfg: &Config, name: Option<&str>) -> CliResult<SelectMethod> {
    match name {
        None => Ok(cfg.method),
        Some(n) => SelectMethod::from_name(n).ok_or_else(|| CliError::Usage(format!("unknown method {n:?}"))),
    }
}

fn dispatch(cli: Cli, cfg: &Config) -> CliResult<()> {
    match cli.command {
        Command::Search => search::run(cfg),
        Command::Select { checkpoint, method: m, bench } => {
            select::run(cfg, &checkpoint, method(cfg, m.as_deref())?, bench.as_deref())
        }
        Command::Bench => bench::run(cfg),
        Command::Verify { checks } => verify::run(cfg, &checks),
        Command::Analyze(a) => match a {
            Analyze::Prop1 { samples, checkpoint, step } => {
                analyze::prop1(cfg, samples.as_deref(), checkpoint.as_deref(), step)
            }
            Analyze::SkipGap { log } => analyze::skip_gap(cfg, &log),
            Analyze::Shuffle(s) => analyze::shuffle(cfg, &s.checkpoint, s.trials, s.chain_depth),
            Analyze::AlphaVsStrength { checkpoint, edges } => analyze::alpha_vs_strength(cfg, &checkpoint, &edges),
            Analyze::Trajectory { checkpoints, bench, method: m, epochs } => {
                analyze::trajectory(cfg, &checkpoints, &bench, method(cfg, m.as_deref())?, &epochs)
            }
        },
    }
}

fn run(args: Vec<String>) -> CliResult<()> {
    let (rest, overrides) = extract_overrides(args)?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            std::process::exit(if code == 0 { 0 } else { 1 });
        }
    };
    let file = cli.config.as_deref().map(commands::read).transpose()?;
    let cfg = Config::resolve(file.as_deref(), std::env::vars(), &overrides)?;
    dispatch(cli, &cfg)
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
