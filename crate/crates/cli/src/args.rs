use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "finegrain", version, about = "Structuralize clinical notes and classify them with a two-stream network")]
pub struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with command settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted label rules.
    Synth(SynthArgs),
    /// Age, gender, admission-month and label histograms of a corpus.
    Stats(StatsArgs),
    /// Normalize notes and extract schema fields.
    Structuralize(StructuralizeArgs),
    /// Report field densities and drop sparse fields from a schema.
    Prune(PruneArgs),
    /// Train a model and write a checkpoint bundle.
    Train(TrainArgs),
    /// Score notes with a trained model and report metrics.
    Evaluate(EvaluateArgs),
    /// Permutation test between two systems' score files.
    Compare(CompareArgs),
    /// Gradient saliency of one class over a note's tokens.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// text-only, struct-only or mixed.
    #[arg(long, default_value = "mixed")]
    pub preset: String,
    #[arg(long, default_value_t = 6600)]
    pub n: usize,
    /// Train,validation,test sizes, e.g. 5000,800,800.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Corpus file, or a directory of split files.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Directory for stats.json and per-panel plot data.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StructuralizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Field schema; defaults to the full candidate schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Preprocessing rule table; defaults to the shipped table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Output directory of `structuralize`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Schema the records were extracted with; defaults to the copy in --in.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0.075)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.jsonl and optionally val.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Field schema; defaults to the shipped 19-field schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// full, infusion-only, fusion-only, baseline, text-only or struct-only.
    #[arg(long)]
    pub variant: Option<String>,
    /// char or word.
    #[arg(long)]
    pub tokenizer: Option<String>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Initialize the embedding with this many skip-gram epochs.
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model bundle directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus file, or a directory whose test.jsonl is used.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Bootstrap resamples for confidence intervals; 0 disables them.
    #[arg(long, default_value_t = 1000)]
    pub n_resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Score file of system A; repeat to pool paired runs.
    #[arg(long = "a", required = true)]
    pub a: Vec<PathBuf>,
    /// Score file of system B, paired with the --a at the same position.
    #[arg(long = "b", required = true)]
    pub b: Vec<PathBuf>,
    /// Compare this class's AP instead of mAP.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus file, or a directory whose test.jsonl is used.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Note id to explain; repeatable. Defaults to every note.
    #[arg(long = "note")]
    pub notes: Vec<String>,
    /// Class name or index, or `labels` for each labelled class of the note.
    #[arg(long, default_value = "labels")]
    pub class: String,
    /// sum (signed) or l2.
    #[arg(long, default_value = "sum")]
    pub reduction: String,
    #[arg(long)]
    pub out: PathBuf,
}
