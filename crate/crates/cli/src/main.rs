//! `era`: synthesize data, split, align, mine, adapt, retrieve, evaluate and
//! report, one step per subcommand.

mod commands;
mod config;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use era_core::{ContrastiveLoss, InitScheme, Metric, Strategy};

#[derive(Debug, Parser)]
#[command(
    name = "era",
    version,
    about = "Linear retrieval adapters over precomputed embeddings"
)]
#[command(args_override_self = true, subcommand_required = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand takes.
#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `key = value` file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a known strong→weak map.
    Synth(SynthArgs),
    /// Split queries into train/val/test per task.
    Split(SplitArgs),
    /// Fit an adapter on documents embedded by both models.
    Align(AlignArgs),
    /// Mine negatives for the train and val queries of a split.
    Mine(MineArgs),
    /// Contrastive fine-tuning of an adapter on labeled queries.
    Adapt(AdaptArgs),
    /// Exhaustive top-k cosine retrieval.
    Retrieve(RetrieveArgs),
    /// Score a run against qrels with task/group macro averages.
    Eval(EvalArgs),
    /// Side-by-side table of several metric reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n_docs: Option<usize>,
    #[arg(long)]
    pub n_queries: Option<usize>,
    #[arg(long)]
    pub strong_dim: Option<usize>,
    #[arg(long)]
    pub weak_dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub cluster_spread: Option<f64>,
    #[arg(long)]
    pub query_noise: Option<f64>,
    #[arg(long)]
    pub query_shift: Option<f64>,
    #[arg(long)]
    pub weak_query_noise: Option<f64>,
    #[arg(long)]
    pub near_duplicates: Option<usize>,
    #[arg(long)]
    pub duplicate_noise: Option<f64>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// Write embeddings as JSON lines instead of the packed binary format.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub jsonl: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Query embeddings; only their ids are used.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub tags: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub train_ratio: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus embedded by the query model.
    #[arg(long)]
    pub query_side: PathBuf,
    /// The same corpus embedded by the document model.
    #[arg(long)]
    pub doc_side: PathBuf,
    /// Task tags; when given, at most `docs-per-task` documents per task are used.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub docs_per_task: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// identity-like, scaled-random or small-random; defaults by shape.
    #[arg(long)]
    pub init: Option<InitScheme>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSONL training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Adapter used to score candidates; zero-shot when absent.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long, default_value = "topk_percpos")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 0.95)]
    pub perc: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub negatives: PathBuf,
    /// Starting adapter; a fresh `init` adapter when absent.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long, default_value = "scaled-random")]
    pub init: InitScheme,
    /// infonce or triplet.
    #[arg(long, default_value = "infonce")]
    pub loss: String,
    #[arg(long, default_value_t = ContrastiveLoss::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = ContrastiveLoss::DEFAULT_MARGIN)]
    pub margin: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    /// Zero-shot retrieval when absent.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Restrict to one part of this split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub subset: String,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value = "era")]
    pub tag: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub tags: PathBuf,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub subset: String,
    /// Metric report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// `name=metrics.json`, repeatable; rows keep this order.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<String>,
    #[arg(long, default_value = "ndcg")]
    pub metric: Metric,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn known_flags(name: &str) -> Option<BTreeSet<String>> {
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(name)?;
    Some(
        sub.get_arguments()
            .filter_map(|a| a.get_long().map(str::to_string))
            .collect(),
    )
}

fn run() -> anyhow::Result<()> {
    let args = config::expand_args(std::env::args_os().collect(), known_flags)?;
    // Usage errors exit with clap's own diagnostic and status 2.
    match Cli::parse_from(args).command {
        Command::Synth(a) => commands::synth(&a),
        Command::Split(a) => commands::split(&a),
        Command::Align(a) => commands::align(&a),
        Command::Mine(a) => commands::mine(&a),
        Command::Adapt(a) => commands::adapt(&a),
        Command::Retrieve(a) => commands::retrieve(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their cause in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.ends_with(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("era: {msg}");
            ExitCode::FAILURE
        }
    }
}
