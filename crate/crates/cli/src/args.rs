use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "roast", version, about = "Classify the roast degree of coffee beans from photos")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info", env = "ROAST_LOG")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic class-per-directory dataset.
    Synth(SynthArgs),
    /// Write every preprocessing stage of one image as PNG.
    Preprocess(PreprocessArgs),
    /// Train on a 60/20/20 split and evaluate on the held-out test part.
    Train(TrainArgs),
    /// k-fold cross-validation over the non-test part of a dataset.
    Kfold(KfoldArgs),
    /// Evaluate a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Classify one image.
    Predict(PredictArgs),
    /// Run the HTTP prediction service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset root to create (dark/, green/, light/, medium/ inside).
    #[arg(long)]
    pub out: PathBuf,
    /// Images per class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image width in pixels.
    #[arg(long, default_value_t = 384)]
    pub width: usize,
    /// Image height in pixels.
    #[arg(long, default_value_t = 384)]
    pub height: usize,
    /// TOML file with a full generator configuration; flags given
    /// explicitly still override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input photo (PNG or JPEG).
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Preprocessing configuration (TOML); defaults apply otherwise.
    #[arg(long)]
    pub preprocess: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct TrainingFlags {
    /// Dataset root with one directory per class.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the model, history, reports and run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training configuration (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preprocessing configuration (TOML).
    #[arg(long)]
    pub preprocess: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Width of the hidden dense layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Backbone name: small-cnn, tiny-cnn or pretrained.
    #[arg(long)]
    pub backbone: Option<String>,
    /// Saved model whose feature extractor the `pretrained` backbone reuses.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Disable training-time augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Seed for splitting, initialization, shuffling and augmentation.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct KfoldArgs {
    #[command(flatten)]
    pub flags: TrainingFlags,
    /// Number of folds.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitPart {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Which part of the dataset to evaluate. Parts are recomputed from the
    /// split ratios and seed stored in the model.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitPart,
    /// Override the split seed stored in the model.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Serving preprocessing; defaults to the configuration stored in the model.
    #[arg(long)]
    pub preprocess: Option<PathBuf>,
    /// Proceed even if the preprocessing fingerprint differs from training.
    #[arg(long)]
    pub allow_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Where to write the JSON sidecar [default: <image>.prediction.json].
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub preprocess: Option<PathBuf>,
    #[arg(long)]
    pub allow_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Saved model; without it the service answers /predict with 503.
    #[arg(long, env = "ROAST_MODEL")]
    pub model: Option<PathBuf>,
    /// Directory holding records.jsonl and uploaded images.
    #[arg(long, env = "ROAST_STORE", default_value = "roast-store")]
    pub store: PathBuf,
    #[arg(long, env = "ROAST_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Maximum request body size in bytes.
    #[arg(long, env = "ROAST_UPLOAD_LIMIT", default_value_t = roast_service::DEFAULT_UPLOAD_LIMIT)]
    pub upload_limit: usize,
    #[arg(long, env = "ROAST_PREPROCESS")]
    pub preprocess: Option<PathBuf>,
    #[arg(long)]
    pub allow_mismatch: bool,
}
