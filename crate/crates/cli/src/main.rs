//! `podnolab`: dataset generation, POD bases, training, evaluation and
//! diagnostics from the command line.
//!
//! Every subcommand takes an optional JSON `--config`, flag overrides and
//! an `--out` directory, and writes `run_manifest.json` next to its outputs.
//! Failures exit nonzero with a JSON error object on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "podnolab", version, about = "Operator learning experiments with POD and Fourier neural operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file (a run_manifest.json from an earlier run also works)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of samples
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid side (nodes per axis)
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Solver time steps (NLS and KP)
    #[arg(long)]
    pub steps: Option<usize>,
    /// Final time (NLS and KP)
    #[arg(long)]
    pub t_final: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// `pod` or `fourier`
    #[arg(long)]
    pub kernel: Option<String>,
    /// POD mode count, or Fourier modes per axis as `m` or `mx,my`
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub model_seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Shuffling seed
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Fraction of training pairs entering the POD snapshot matrix
    #[arg(long)]
    pub snapshot_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct PodBasisArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub snapshot_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// First sample (inclusive)
    #[arg(long)]
    pub start: Option<usize>,
    /// Last sample (exclusive)
    #[arg(long)]
    pub end: Option<usize>,
    /// Band split of the spectrum summary
    #[arg(long)]
    pub split_frac: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid side
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample index of the initial state
    #[arg(long)]
    pub index: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Snapshot recipe 1, 2 or 3
    #[arg(long)]
    pub basis_type: Option<u8>,
    /// Comma-separated basis sizes
    #[arg(long)]
    pub modes: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// modes, snapshots, resolution or timesteps
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated axis values
    #[arg(long)]
    pub values: Option<String>,
    /// darcy, nls or kp
    #[arg(long)]
    pub family: Option<String>,
    /// Number of generated samples
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Darcy flow dataset
    GenDarcy(GenArgs),
    /// Generate an NLS dataset
    GenNls(GenArgs),
    /// Generate a KP-I dataset
    GenKp(GenArgs),
    /// Compute a POD basis from a dataset's training split
    PodBasis(PodBasisArgs),
    /// Train a neural operator
    Train(TrainArgs),
    /// Relative errors of a checkpoint on a dataset
    Eval(ModelDataArgs),
    /// Write predictions of a checkpoint as a dataset directory
    Predict(ModelDataArgs),
    /// Error spectrum and band summary of a checkpoint
    Spectrum(ModelDataArgs),
    /// Solve one NLS instance with the Fourier splitting
    SplitSolve(SplitArgs),
    /// POD-accelerated splitting error against the Fourier splitting
    PodSplitSolve(SplitArgs),
    /// Retrain along one ablation axis
    Ablate(AblateArgs),
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("PODNOLAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| config::ConfigError(format!("PODNOLAB_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenDarcy(a) => commands::gen(a, podnolab_core::Family::Darcy),
        Command::GenNls(a) => commands::gen(a, podnolab_core::Family::Nls),
        Command::GenKp(a) => commands::gen(a, podnolab_core::Family::Kp),
        Command::PodBasis(a) => commands::pod_basis(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Spectrum(a) => commands::spectrum(a),
        Command::SplitSolve(a) => commands::split_solve(a, false),
        Command::PodSplitSolve(a) => commands::split_solve(a, true),
        Command::Ablate(a) => commands::ablate(a),
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<podnolab_core::Error>() {
            return c.kind();
        }
        if cause.downcast_ref::<config::ConfigError>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return "config";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "error"
}

fn report(kind: &str, message: String) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(error_kind(&e), format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
