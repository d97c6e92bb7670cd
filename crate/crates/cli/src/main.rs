//! `merton`: simulate panels, estimate the regime-switching model, build
//! linearization schedules, price claims and default probabilities, and run
//! the built-in reference checks.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::ConfigFile;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or inputs (exit 1).
    Invalid(String),
    Core(merton_core::Error),
    /// A check suite reported failures (exit 2).
    ChecksFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(_) => 1,
            CliError::ChecksFailed(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::ChecksFailed(k) => write!(f, "{k} check(s) failed"),
        }
    }
}

impl From<merton_core::Error> for CliError {
    fn from(e: merton_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "merton",
    version,
    about = "Regime-switching structural default model"
)]
pub struct Cli {
    /// JSON run configuration (flags take precedence).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Omit the generation time from JSON outputs.
    #[arg(long, global = true)]
    pub no_timestamps: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic panel from known parameters.
    Simulate(SimulateArgs),
    /// Fit the model to a panel by EM.
    Estimate(EstimateArgs),
    /// Write the linearization schedule of a panel.
    Linearize(LinearizeArgs),
    /// Price calls, puts, equity and liabilities.
    Price(ValuationArgs),
    /// Physical default probabilities.
    Default(ValuationArgs),
    /// Run the reference checks.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Parameter JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Number of dates to simulate.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Output directory for panel.csv, rates.csv, exog.csv and regimes.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Initial equity values then initial liability values.
    #[arg(long, value_delimiter = ',')]
    pub initial_values: Option<Vec<f64>>,
    /// Initial simple spot rate.
    #[arg(long, allow_negative_numbers = true)]
    pub initial_rate: Option<f64>,
    /// Payout ratios in (0, 1), equity block then liability block.
    #[arg(long, value_delimiter = ',')]
    pub payout_ratios: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Directory with panel.csv, rates.csv and exog.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for params.json, trace.csv and smoothed.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of regimes.
    #[arg(long)]
    pub regimes: Option<usize>,
    /// Maximum EM iterations.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative loglik convergence tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Number of EM starts; the best log-likelihood wins.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Start EM from these parameters instead of k-means.
    #[arg(long)]
    pub init_params: Option<PathBuf>,
    /// Transition update divided by current-date posteriors (rows renormalized).
    #[arg(long)]
    pub literal_paper_mstep: bool,
}

#[derive(Debug, Args)]
pub struct LinearizeArgs {
    /// Directory with panel.csv, rates.csv and exog.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Parameter JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Output CSV (t, component, mu, g, h).
    #[arg(long)]
    pub out: PathBuf,
    /// Use observed liability-to-equity ratios as the asset expansion points.
    #[arg(long)]
    pub data_asset_means: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathMode {
    Auto,
    Enumerate,
    Mc,
}

#[derive(Debug, Args)]
pub struct ValuationArgs {
    /// Directory with panel.csv, rates.csv and exog.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Parameter JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Valuation date.
    #[arg(long)]
    pub t: Option<usize>,
    /// Maturity (defaults to the last panel date).
    #[arg(long)]
    pub maturity: Option<usize>,
    /// Nominal liabilities used as strikes, one per company.
    #[arg(long, value_delimiter = ',')]
    pub strikes: Option<Vec<f64>>,
    /// Default thresholds, one per company (defaults to the strikes).
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Regime paths: auto, enumerate or mc.
    #[arg(long, value_enum)]
    pub paths: Option<PathMode>,
    /// Sampled regime paths when not enumerating.
    #[arg(long)]
    pub mc_paths: Option<usize>,
    /// Open the discount sum with the model mean of the next spot rate.
    #[arg(long)]
    pub literal_discount: bool,
    /// Joint default probability as a product of normal CDFs (comparison only).
    #[arg(long)]
    pub literal_paper_cdf: bool,
    /// Include per-path values in the JSON report.
    #[arg(long)]
    pub emit_paths: bool,
    /// Use observed liability-to-equity ratios as the asset expansion points.
    #[arg(long)]
    pub data_asset_means: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// linearization, filter, parity, bond, options, default, mixture or all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    /// Simulated trajectories per Monte Carlo comparison.
    #[arg(long)]
    pub mc_paths: Option<usize>,
    /// Also write the table as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile {
            version: config::CONFIG_VERSION,
            ..Default::default()
        },
    };
    if let Some(n) = cli.threads.or(cfg.threads) {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    let ctx = commands::Context {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        timestamps: !cli.no_timestamps,
        config: cfg,
    };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Estimate(a) => commands::estimate(&ctx, a),
        Command::Linearize(a) => commands::linearize(&ctx, a),
        Command::Price(a) => commands::price(&ctx, a),
        Command::Default(a) => commands::default_probability(&ctx, a),
        Command::Check(a) => commands::check(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
