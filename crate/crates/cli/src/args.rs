use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cdcgcn", version, about = "Community-aware debiasing for implicit-feedback recommenders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an interaction log into train/val/test.
    Split(SplitArgs),
    /// Detect communities on the train graph with Louvain.
    Detect(DetectArgs),
    /// Pretrain the base model with BPR.
    Pretrain(PretrainArgs),
    /// Train the debiased model.
    Train(TrainArgs),
    /// Train or run a comparison method.
    Baseline(BaselineArgs),
    /// Evaluate a checkpoint and print the metrics table.
    Eval(EvalArgs),
    /// Build the debiased test set (one item per user and community).
    Debias(DebiasArgs),
    /// Write a checkpoint's final embeddings with community labels.
    Export(ExportArgs),
    /// Train one debiased model per (alpha, beta) pair.
    Sweep(SweepArgs),
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Run directory holding splits, community, checkpoints, logs and reports.
    #[arg(long, visible_alias = "out", value_name = "DIR")]
    pub run: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Dedicated flags win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for splitting, detection, initialization and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Training flags; each one overrides the key of the same name.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Base model: mf or lightgcn.
    #[arg(long)]
    pub base: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr", value_name = "RATE")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Interaction log, one `user item` pair per line.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// ws, tsv or csv, optionally with `+header`.
    #[arg(long, default_value = "ws")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Louvain resolution.
    #[arg(long)]
    pub resolution: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Community negative-sampling mixture in [0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Adversarial weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Feed base embeddings to the discriminator without community propagation.
    #[arg(long)]
    pub no_cgcn: bool,
    /// Drop the discriminator and the adversarial loss.
    #[arg(long)]
    pub no_cd: bool,
    /// Uniform negatives.
    #[arg(long)]
    pub no_cns: bool,
    /// Score with the debiased model alone.
    #[arg(long)]
    pub no_uis: bool,
    /// Checkpoint and log name [default: cdcgcn_<base>].
    #[arg(long)]
    pub name: Option<String>,
    /// Do not fuse with the pretrained base model.
    #[arg(long)]
    pub no_pretrained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Community-balanced re-ranking of the pretrained model.
    Mmr,
    /// Same-community fairness regularizer.
    Fairness,
    /// Inverse-propensity weighted BPR.
    Ips,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CgiArg {
    PerUser,
    Pooled,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint name as listed in the manifest.
    #[arg(long)]
    pub model: String,
    /// Comma-separated cutoffs.
    #[arg(long)]
    pub ks: Option<String>,
    /// Evaluate on the debiased test set (run `debias` first).
    #[arg(long)]
    pub debiased: bool,
    #[arg(long, value_enum)]
    pub cgi: Option<CgiArg>,
    /// Also write the per-group ILFBI report.
    #[arg(long)]
    pub groups: bool,
}

#[derive(Debug, Args)]
pub struct DebiasArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Comma-separated alpha values [default: the alpha key].
    #[arg(long)]
    pub alpha: Option<String>,
    /// Comma-separated beta values [default: the beta key].
    #[arg(long)]
    pub beta: Option<String>,
}
