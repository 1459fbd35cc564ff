//! `cohhgn`: synthesise or ingest purchase logs, build graphs, train,
//! evaluate and query the session recommender.

mod commands;
mod workdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cohhgn::error::Category;

use crate::workdir::CORPUS;

#[derive(Debug, Parser)]
#[command(name = "cohhgn", version, about = "Session-based next-item recommender")]
pub struct Cli {
    /// Directory holding every artifact of a run.
    #[arg(long, env = "COHHGN_DATA_DIR", default_value = ".", global = true)]
    pub data_dir: PathBuf,

    /// TOML file with optional [synth], [ingest] and [train] tables.
    /// Command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic purchase log with planted item transitions.
    Synth(SynthArgs),
    /// Segment, filter, split and encode a purchase log.
    Ingest(IngestArgs),
    /// Build hypergraphs and co-occurrence graphs from the training split.
    BuildGraphs(GraphArgs),
    /// Train a model and keep the best epoch by validation M@20.
    Train(TrainArgs),
    /// Report P@k and M@k on a split.
    Evaluate(EvaluateArgs),
    /// Rank next items for a partial session.
    Recommend(RecommendArgs),
    /// Compare autodiff gradients with finite differences on a toy problem.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = CORPUS)]
    pub out: PathBuf,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub patterns: Option<usize>,
    #[arg(long)]
    pub pattern_strength: Option<f64>,
    #[arg(long)]
    pub mean_length: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, default_value = CORPUS)]
    pub input: PathBuf,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub price_bins: Option<usize>,
    #[arg(long)]
    pub train_week_max: Option<u32>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Field separator of the input file.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub epsilon: Option<usize>,
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub price_bins: Option<usize>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub week_dim: Option<usize>,
    #[arg(long)]
    pub shards: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoints to evaluate; several are averaged as independent runs.
    #[arg(long, default_values = [workdir::CHECKPOINT])]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20])]
    pub k: Vec<usize>,
    /// Also score the popularity and first-order transition baselines.
    #[arg(long)]
    pub baselines: bool,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    /// Item names of the partial session, oldest first.
    #[arg(required = true)]
    pub items: Vec<String>,
    /// Raw prices paid, one per item. Defaults to each item's usual price range.
    #[arg(long, value_delimiter = ',')]
    pub prices: Option<Vec<f64>>,
    /// Defaults to the first test week.
    #[arg(long)]
    pub week: Option<u32>,
    #[arg(long, default_value = "")]
    pub gender: String,
    #[arg(long, default_value = "")]
    pub region: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value = workdir::CHECKPOINT)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = cohhgn::model::gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = cohhgn::model::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

fn exit_code(c: Category) -> u8 {
    match c {
        Category::Config => 2,
        Category::Data => 3,
        Category::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {detail}", e.category().as_str());
            ExitCode::from(exit_code(e.category()))
        }
    }
}
