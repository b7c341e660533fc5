//! `partldp`: sample, fit, evaluate, probe, sweep and certify partitioning classifiers.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "partldp", version, about = "Partitioning classification with and without local differential privacy")]
struct Cli {
    /// Master seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log more (-v info, -vv debug). Logs go to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw labeled samples from the configured distribution as CSV `x1,..,xd,y`.
    Sample(SampleArgs),
    /// Fit a partitioning classifier on a sample CSV and write it in PCLF1 format.
    Fit(FitArgs),
    /// Error probability and excess risk of a PCLF1 classifier under the configured distribution.
    Evaluate(EvaluateArgs),
    /// Margin and combined-condition functionals over a t grid, with fitted exponents.
    Probe(ConfigArgs),
    /// Rate-of-convergence sweep; writes the rate table CSV.
    Sweep(ConfigArgs),
    /// Empirical LDP certificate of the Laplace cell mechanism: exit 0 iff max |log ratio| <= alpha.
    LdpCheck(LdpCheckArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(short, long)]
    config: PathBuf,

    /// Output path; defaults to `output` in the config, then stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    io: ConfigArgs,

    /// Number of samples.
    #[arg(short, long)]
    n: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Experiment config file (TOML); supplies the partition's bounding box and label set.
    #[arg(short, long)]
    config: PathBuf,

    /// Sample CSV with header `x1,..,xd,y`.
    #[arg(short, long)]
    data: PathBuf,

    /// Cell side length.
    #[arg(long)]
    h: f64,

    /// Privacy budget; fits the private classifier when given.
    #[arg(long)]
    alpha: Option<f64>,

    /// Noise generation for the private fit.
    #[arg(long, value_enum, default_value_t = Noise::AggregateShortcut)]
    noise: Noise,

    /// Where to write the PCLF1 classifier.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Noise {
    /// One Laplace vector per record.
    PerRecord,
    /// Per-cell Gamma differences with the law of the summed noise.
    AggregateShortcut,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Experiment config file (TOML); supplies the distribution.
    #[arg(short, long)]
    config: PathBuf,

    /// PCLF1 classifier written by `fit`.
    #[arg(long)]
    classifier: PathBuf,

    /// Evaluate by Monte Carlo with this many draws instead of quadrature.
    #[arg(long)]
    monte_carlo: Option<usize>,
}

#[derive(Debug, Args)]
struct LdpCheckArgs {
    /// Privacy budget.
    #[arg(long)]
    alpha: f64,

    /// Number of random record pairs.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,

    /// Number of classes; 2 or more uses one coordinate per (cell, class), omitted means binary.
    #[arg(long)]
    classes: Option<usize>,

    /// Cell side length of the released partition of [-1, 1]^dim.
    #[arg(long, default_value_t = 0.25)]
    h: f64,

    /// Dimension of the released partition.
    #[arg(long, default_value_t = 1)]
    dim: usize,

    /// Test hook: multiply the Laplace scale by this factor. Values below 1 break the guarantee.
    #[arg(long, default_value_t = 1.0)]
    scale_factor: f64,
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Sample(a) => commands::sample(&a.io.config, a.n, cli.seed, a.io.out.as_deref()),
        Command::Fit(a) => commands::fit(commands::FitRequest {
            config: &a.config,
            data: &a.data,
            h: a.h,
            alpha: a.alpha,
            per_record: matches!(a.noise, Noise::PerRecord),
            seed: cli.seed,
            out: &a.out,
        }),
        Command::Evaluate(a) => commands::evaluate(&a.config, &a.classifier, a.monte_carlo, cli.seed),
        Command::Probe(a) => commands::probe(&a.config, a.out.as_deref()),
        Command::Sweep(a) => commands::sweep(&a.config, cli.seed, a.out.as_deref()),
        Command::LdpCheck(a) => commands::ldp_check(commands::LdpRequest {
            alpha: a.alpha,
            trials: a.trials,
            classes: a.classes,
            h: a.h,
            dim: a.dim,
            scale_factor: a.scale_factor,
            seed: cli.seed.unwrap_or(0),
        }),
    }
}

/// `PARTLDP_THREADS` caps the rayon pool; it is the only environment setting.
fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("PARTLDP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("PARTLDP_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot configure {n} threads: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("partldp: {f}");
            ExitCode::from(f.code())
        }
    }
}
