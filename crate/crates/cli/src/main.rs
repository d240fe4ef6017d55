mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use settings::Backend;
use weakdap_core::{LabelMode, Metric, Regen, Strategy, Task};

#[derive(Debug, Parser)]
#[command(name = "weakdap", version, about = "Prompt-based dialogue augmentation with entropy-filtered weak supervision")]
pub struct Cli {
    /// JSON config file; flags override it, it overrides WEAKDAP_ENDPOINT.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a seeded few-shot training subset and a manifest.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_fraction)]
        fraction: f64,
        /// Sample uniformly instead of stratifying by label.
        #[arg(long)]
        uniform: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate silver candidates from gold data.
    Augment {
        #[arg(long)]
        input: PathBuf,
        /// English example pool for intent data.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Train a classifier on gold data plus optional candidates.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Run the iterative augment, filter and train loop.
    Weakdap {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        gen: GenArgs,
        #[command(flatten)]
        loop_args: LoopArgs,
        #[command(flatten)]
        train_args: TrainArgs,
    },
    /// Score a checkpoint on labelled data.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Also write per-instance feature rows to this JSONL file.
        #[arg(long)]
        export_features: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Produce EDA, AEDA or random in-context candidates.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        input: PathBuf,
        /// Synonym file (word TAB syn1,syn2); `bundled` uses the shipped one.
        #[arg(long, default_value = "bundled")]
        lexicon: String,
        #[arg(long)]
        alpha_sr: Option<f64>,
        #[arg(long)]
        alpha_ri: Option<f64>,
        #[arg(long)]
        alpha_rs: Option<f64>,
        #[arg(long)]
        alpha_rd: Option<f64>,
        /// Punctuation insertion rate for AEDA.
        #[arg(long)]
        aeda_alpha: Option<f64>,
        /// Variants per gold unit; defaults to ceil(multiplier).
        #[arg(long)]
        n_aug: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        gen: GenArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Eda,
    Aeda,
    Incontext,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub task: Option<Task>,
    /// Label-space JSON file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Planted label-noise rate of the mock backend.
    #[arg(long)]
    pub mock_noise: Option<f64>,
    #[arg(long)]
    pub mock_templates: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub multiplier: Option<f64>,
    #[arg(long)]
    pub label_mode: Option<LabelMode>,
    /// In-context example count.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub control_prefix: Option<String>,
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    #[arg(long)]
    pub filter_percentile: Option<f64>,
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub regen: Option<Regen>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub context_window: Option<usize>,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if f > 0.0 && f <= 1.0 {
        Ok(f)
    } else {
        Err(format!("fraction must lie in (0, 1], got {f}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
