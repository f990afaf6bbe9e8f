//! `aitpr`: synthesize scene data, train and evaluate the caption decoder,
//! and check its gradients.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aitpr_core::decoder::FusionMode;

#[derive(Debug, Parser)]
#[command(
    name = "aitpr",
    version,
    about = "Tensor-product caption decoder toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes with region features and reference captions.
    Synth(SynthArgs),
    /// Train a decoder with teacher forcing.
    Train(TrainArgs),
    /// Decode every scene greedily and score the captions.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of scenes (at least 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub scenes: u64,
    #[arg(long, env = "AITPR_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Region feature dimension.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Standard deviation of the feature noise.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = ["1", "2", "3"])]
    pub variant: Option<String>,
    #[arg(long)]
    pub fusion: Option<FusionMode>,
    /// JSON file with training settings; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path. The loss trace and manifest go in the same directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, env = "AITPR_SEED")]
    pub seed: Option<u64>,
    /// Total epoch budget.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report JSON path. Captions and the manifest go in the same directory.
    #[arg(long)]
    pub report: PathBuf,
    /// Decoded captions file; defaults to `captions.txt` beside the report.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Sizes as `D=..,d=..,e=..,V=..` with optional `att=..` (default d).
    #[arg(long, default_value = "D=16,d=6,e=5,V=12")]
    pub dims: String,
    /// Check one variant only; all three when omitted.
    #[arg(long, value_parser = ["1", "2", "3"])]
    pub variant: Option<String>,
    /// Check one fusion mode only; both when omitted.
    #[arg(long)]
    pub fusion: Option<FusionMode>,
    /// Perturb one analytic gradient entry (negative control).
    #[arg(long)]
    pub corrupt_gradient: bool,
    #[arg(long, env = "AITPR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
