//! Command-line pipelines: synthetic data, tokenization, eigengrasps,
//! object pretraining, training, prediction and proxy evaluation.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{RunConfig, Snapshot};

/// File written into every output directory.
pub const SNAPSHOT_FILE: &str = "run_config.toml";

pub const PROXY_DISCLAIMER: &str = "note: success is an analytic force-closure proxy on the object point cloud, \
not a physics-simulated lift test; rates are not comparable to simulator benchmarks";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// The message on a single line.
    pub fn diagnostic(&self) -> String {
        format!("error: {}", self.to_string().split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

impl From<xgrasp_core::Error> for CliError {
    fn from(e: xgrasp_core::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "xgrasp", version, about = "Cross-embodiment grasp articulation from eigengrasps")]
pub struct Cli {
    /// TOML file with run settings (sections: model, pretrain, train, eval, synth).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=50`. Repeatable; applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Seed for data generation, baselines, model init and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a URDF and write its padded morphology tokens.
    Tokenize(TokenizeArgs),
    /// PCA eigengrasps of one hand's articulations in a dataset.
    Eigengrasps(EigengraspsArgs),
    /// Pretrain the object encoder as a point-cloud autoencoder.
    PretrainObject(PretrainArgs),
    /// Train the full model.
    Train(TrainArgs),
    /// Predict an articulation for one hand, cloud and wrist pose.
    Predict(PredictArgs),
    /// Predict every sample of a dataset and score it with the grasp proxy.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic hand and a labelled grasp dataset.
    Synth(SynthArgs),
    /// Kinematics-aware loss weights of a hand at one articulation.
    KalWeights(KalArgs),
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub urdf: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EigengraspsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Hand id from the dataset header.
    #[arg(long)]
    pub hand: String,
    /// Number of eigengrasps [default: model.k = 9].
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Object-encoder widths [default: model.object_preset = desk].
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// [default: pretrain.epochs = 300]
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Kal,
    Mse,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Start from this checkpoint's weights, e.g. a pretrained object encoder.
    #[arg(long, conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    /// Continue a run: weights, optimizer state, epoch count and metrics.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total epochs, counting resumed ones [default: train.epochs = 200].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: train.batch_size = 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: train.lr = 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Joint weighting: kinematics-aware, or uniform [default: kal].
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Feed ground-truth eigengrasps to the amplitude predictor.
    #[arg(long)]
    pub teacher_forcing: bool,
    /// Keep the object encoder fixed.
    #[arg(long)]
    pub freeze_object: bool,
    /// Disable augmentation.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub urdf: PathBuf,
    /// Object cloud as `x y z` lines in meters.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Wrist pose in the cloud frame: `tx,ty,tz,r1,...,r6` (translation, then two rotation columns).
    #[arg(long, allow_hyphen_values = true)]
    pub wrist: String,
    /// Also write the posed hand primitives and the cloud.
    #[arg(long)]
    pub geometry: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Also score uniformly random articulations on the same wrists and clouds.
    #[arg(long)]
    pub random_baseline: bool,
    /// Friction coefficient [default: eval.mu = 0.5].
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// [default: synth.hand.fingers = 3]
    #[arg(long)]
    pub fingers: Option<usize>,
    /// Revolute joints per finger [default: synth.hand.joints_per_finger = 3].
    #[arg(long)]
    pub joints: Option<usize>,
    /// [default: synth.grasps = 200]
    #[arg(long)]
    pub grasps: Option<usize>,
    /// Distinct primitive objects [default: synth.objects = 12].
    #[arg(long)]
    pub objects: Option<usize>,
    /// Keep only grasps labelled stable.
    #[arg(long)]
    pub stable_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KalArgs {
    #[arg(long)]
    pub urdf: PathBuf,
    /// Comma-separated articulation; zeros when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    commands::dispatch(cli)
}
