//! `drail`: expert generation, training runs, evaluation, reward-landscape
//! export and file inspection.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or validation error,
//! 3 numerical abort.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "drail",
    version,
    about = "Diffusion-reward adversarial imitation learning lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write an expert dataset (and a manifest next to it).
    GenExpert(GenExpertArgs),
    /// Train a policy; writes checkpoints, metrics.csv and manifest.json.
    Train(TrainArgs),
    /// Evaluate a policy checkpoint and print the report as JSON.
    Eval(EvalArgs),
    /// Export a discriminator's D or reward over the Sine grid as CSV.
    RewardMap(RewardMapArgs),
    /// Print the header of a dataset or checkpoint file as JSON.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenExpertArgs {
    /// Environment name (sine, point_reach).
    #[arg(long)]
    pub env: String,
    /// Transitions for sine, successful trajectories for point_reach.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    /// point_reach only: add the wall obstacle.
    #[arg(long)]
    pub wall: bool,
    /// point_reach only: spread of the start and goal distributions.
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    /// point_reach only: also write the scripted controller as a policy checkpoint.
    #[arg(long)]
    pub expert_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override applied after the config, e.g. `--set disc.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory (default: runs/<method>-<env>-seed<seed>).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Suppress per-evaluation progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Policy checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "point_reach")]
    pub env: String,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample actions instead of using the mean.
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long)]
    pub wall: bool,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RewardMapArgs {
    /// Discriminator checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Grid size as `<states>x<actions>`.
    #[arg(long, default_value = "101x121")]
    pub resolution: String,
    /// Draws averaged per cell (diffusion discriminators).
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cell value: prob (D) or reward.
    #[arg(long, default_value = "prob")]
    pub quantity: String,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenExpert(a) => commands::gen_expert(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::RewardMap(a) => commands::reward_map(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
