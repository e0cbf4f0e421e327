use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "entrodrop", version, about = "Entropy-increase pruning of transformer blocks")]
pub struct Cli {
    /// Seed for model initialisation and token sub-sampling.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads for analysis (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output path. `analyze` and `bench` treat it as a prefix.
    #[arg(long, global = true, default_value = "entrodrop-out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run calibration sequences through the toy model and write a trace file.
    Trace(TraceArgs),
    /// Estimate snapshot entropies and write a profile CSV and chart.
    Analyze(AnalyzeArgs),
    /// Rank blocks and write a pruning plan.
    Plan(PlanArgs),
    /// Perplexity before and after pruning each prefix of a plan.
    Evaluate(EvaluateArgs),
    /// Time greedy generation for each prefix of a plan.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 256)]
    pub vocab: usize,
    #[arg(long, default_value_t = 128)]
    pub max_seq: usize,
    /// Load weights from a checkpoint instead of initialising.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Markov,
    Repetition,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArgs {
    #[arg(long, value_enum, default_value_t = CorpusKind::Repetition)]
    pub corpus: CorpusKind,
    /// Markov context length; 0 gives uniform tokens.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, default_value_t = 4)]
    pub period: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 64)]
    pub sequences: usize,
    #[arg(long, default_value_t = 32)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 2)]
    pub corpus_seed: u64,
    /// Read token ids from a text file instead of generating them.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TraceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// SGD steps on a separate corpus of the same kind before tracing.
    #[arg(long, default_value_t = 0)]
    pub train_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2400)]
    pub train_sequences: usize,
    #[arg(long, default_value_t = 1)]
    pub train_corpus_seed: u64,
    /// Scale this attention block's output projection (1-based).
    #[arg(long)]
    pub plant: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub plant_scale: f32,
    /// Also write the (trained, planted) model here.
    #[arg(long)]
    pub save_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorName {
    Bucket,
    Knn,
    Renyi,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value_t = EstimatorName::Bucket)]
    pub estimator: EstimatorName,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Neighbour rank for the k-NN estimator.
    #[arg(long, default_value_t = 25)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Token rows drawn per snapshot before estimation.
    #[arg(long, default_value_t = 4096)]
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityName {
    Layer,
    Attention,
    Mlp,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, value_enum, default_value_t = GranularityName::Attention)]
    pub granularity: GranularityName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionName {
    Entropy,
    Cosine,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long, conflicts_with = "profile", required_unless_present = "profile")]
    pub trace: Option<PathBuf>,
    /// Profile CSV written by `analyze`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CriterionName::Entropy)]
    pub criterion: CriterionName,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = GranularityName::Attention)]
    pub granularity: GranularityName,
    /// First eligible block; 0 or 1 disables protection.
    #[arg(long)]
    pub s_start: Option<usize>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Random plans per k to compare against, seeded 0, 1, ...
    #[arg(long, default_value_t = 0)]
    pub random_seeds: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 1024)]
    pub gen_len: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Prefix sizes to time (default: every prefix of the ranking).
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
}
