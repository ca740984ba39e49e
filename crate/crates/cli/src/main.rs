//! `atr`: simulate, featurize, train, evaluate and compare router-attention
//! localization models.
//!
//! Exit codes: 0 success, 1 invalid usage or configuration, 2 runtime failure.

mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Marks an error as a usage or configuration problem (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl fmt::Display) -> anyhow::Error {
    Invalid(msg.to_string()).into()
}

#[derive(Debug, Parser)]
#[command(name = "atr", version, about = "Router-attention Wi-Fi localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic CSI dataset.
    Simulate(SimulateArgs),
    /// Convert a CSI dataset into AoA-ToF heatmaps and AoA targets.
    Featurize(FeaturizeArgs),
    /// Train a baseline or attention model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write report CSVs.
    Eval(EvalArgs),
    /// Compare two report directories (baseline vs ours).
    Compare(CompareArgs),
    /// Run gradient, permutation, triangulation and featurizer oracles.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Key-value config file (`arena.*`, `ap.N.*`, `chan.*`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output dataset file (ATRD).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of frames (samples), at least 1.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Random seed (integer); default 42.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Input dataset file (ATRD).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output feature file (ATRF).
    #[arg(long)]
    pub out: PathBuf,
    /// Key-value config file (`feat.n_theta`, `feat.n_tau`, `feat.tau_max_ns`, `feat.sigma_theta_bins`).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature file (ATRF).
    #[arg(long)]
    pub data: PathBuf,
    /// Key-value config file (`model.*`, `train.*`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Router attention between encoder and decoder.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub attention: Switch,
    /// Output checkpoint (ATRW).
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// Per-epoch training log (CSV; losses in m^2, errors in m).
    #[arg(long)]
    pub log: PathBuf,
    /// Seed for the split, batch order and initialization (integer); default 42.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of epochs; overrides `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint (ATRW).
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Feature file (ATRF) the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to score: train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Directory for report.csv, cdf.csv, tiers.csv, tier_summary.csv, alpha_stats.csv (errors in cm).
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report directory of the baseline model.
    #[arg(long)]
    pub base_dir: PathBuf,
    /// Report directory of the attention model.
    #[arg(long)]
    pub ours_dir: PathBuf,
    /// Output comparison CSV (errors in cm, improvement in percent).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Seed for the random probes (integer); default 42.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

fn init_threads(default_single: bool) -> anyhow::Result<()> {
    let threads = match std::env::var("ATR_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| invalid(format!("ATR_THREADS: bad value `{v}`")))?.max(1)),
        Err(_) => default_single.then_some(1),
    };
    if let Some(n) = threads {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(matches!(cli.command, Command::Selftest(_)))?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Featurize(a) => commands::featurize(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Selftest(a) => commands::selftest(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
