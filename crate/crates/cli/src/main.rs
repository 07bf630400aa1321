mod cluster;
mod config;
mod error;
mod fit;
mod io;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "spreadlab", version, about = "Agent-based news spreading experiments")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "spreadlab-out")]
    out: PathBuf,
    /// Worker threads for replicate runs (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Serve model queries from the cache only.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every seed event × replicate and write runs, exposures and curves.
    Simulate,
    /// Fit a logistic or mean-field model to simulation outputs.
    Fit(FitArgs),
    /// Select a PCA + k-means event clustering and label severities.
    ClusterEvents(ClusterArgs),
    /// Group trait profiles by Tukey HSD on response ratios.
    GroupTraits(GroupArgs),
    /// Emit figure CSVs comparing observed and model curves.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitWhat {
    LogisticFull,
    LogisticTwoGroup,
    LogisticLinear,
    Meanfield,
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    #[arg(value_enum)]
    pub what: FitWhat,
    /// Decision log (default: <out>/exposures.csv).
    #[arg(long)]
    pub exposures: Option<PathBuf>,
    /// Aggregate curve CSV (default: <out>/aggregate.csv).
    #[arg(long)]
    pub aggregate: Option<PathBuf>,
    /// Profile grouping JSON (default: the config's grouping).
    #[arg(long)]
    pub grouping: Option<PathBuf>,
    /// Network degree for the mean-field fit (default: the config's k, else 5).
    #[arg(long)]
    pub k: Option<usize>,
    /// Also match the per-group curves in the mean-field fit.
    #[arg(long)]
    pub group_curves: bool,
    /// Ridge weight for logistic fits.
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
}

#[derive(Debug, clap::Args)]
pub struct ClusterArgs {
    /// Event records (JSON lines).
    #[arg(long)]
    pub events: PathBuf,
    /// Precomputed embeddings (JSON lines); fetched through the gateway otherwise.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Response cache directory for fetched embeddings.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub max_components: usize,
    #[arg(long, default_value_t = 6)]
    pub max_clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct GroupArgs {
    /// Response ratio table CSV.
    #[arg(long, conflicts_with = "exposures")]
    pub ratios: Option<PathBuf>,
    /// Decision log to build the ratio table from.
    #[arg(long)]
    pub exposures: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Profile grouping JSON (default: the config's grouping, else <out>/grouping.json).
    #[arg(long)]
    pub grouping: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(CliError::other)?;
    }
    let config = cli.config.as_deref().map(config::ExperimentConfig::load).transpose()?;
    match cli.command {
        Command::Simulate => {
            let config = config.ok_or_else(|| CliError::config("simulate needs --config"))?;
            simulate::run(&config, &cli.out, cli.force, cli.offline)
        }
        Command::Fit(args) => fit::run(&args, config.as_ref(), &cli.out, cli.force),
        Command::ClusterEvents(args) => cluster::cluster_events(&args, &cli.out, cli.force, cli.offline),
        Command::GroupTraits(args) => cluster::group_traits(&args, &cli.out, cli.force),
        Command::Report(args) => report::run(&args, config.as_ref(), &cli.out, cli.force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
