//! `scene-informer`: data generation, training, evaluation, inference and
//! annotation for the occlusion-aware scene model.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid configuration
//! or input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "scene-informer", version, about = "Occlusion-aware occupancy and trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic scenes as line-delimited JSON.
    Generate(GenerateArgs),
    /// Train a model under the single-occluder regime.
    Train(TrainArgs),
    /// Evaluate a checkpoint across observability regimes.
    Eval(EvalArgs),
    /// Query one occlusion of one scene.
    Infer(InferArgs),
    /// Apply a regime to scenes and write occlusions and anchors into them.
    Annotate(AnnotateArgs),
    /// Report trainable parameter counts.
    Params(ParamsArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// TOML file with `count`, `seed` and `[[templates]]`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `straight_road`, `four_way_intersection`, `mixed`, or a TOML template file.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// TOML training config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Validation scenes, evaluated after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Model size preset: `desk` or `full`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Resume from this checkpoint instead of initializing.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Percent of agents acting as occluders, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,25,50,75,100")]
    pub sweep: Vec<u32>,
    /// Output directory for `report.json`, `report.txt` and `metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Occlusion anchors per scene.
    #[arg(long)]
    pub n_anchors: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scenes used to fit the occupancy-prior baseline; enables both baselines.
    #[arg(long)]
    pub prior_data: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub scene_file: PathBuf,
    #[arg(long)]
    pub scene_id: String,
    #[arg(long)]
    pub occluder_id: String,
    #[arg(long, default_value_t = scene_informer::geometry::DEFAULT_OCC_ANCHORS)]
    pub n_anchors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub scene_file: PathBuf,
    /// `full`, `limited`, `single_occluder` or `partial:<p>`.
    #[arg(long, default_value = "single_occluder")]
    pub regime: String,
    #[arg(long, default_value_t = scene_informer::geometry::DEFAULT_OCC_ANCHORS)]
    pub n_anchors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ParamsArgs {
    /// `desk`, `full`, or omit for both.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML training config whose `[model]` section is counted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Annotate(a) => commands::annotate(a),
        Command::Params(a) => commands::params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
