use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "artiwave", version, about = "Acoustic-to-articulatory inversion with a conditional WaveNet")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Predict trajectories from audio or features.
    Invert(InvertArgs),
    /// Score predicted trajectories against references.
    Evaluate(EvaluateArgs),
    /// Compare naive and cached generation cost.
    Benchmark(BenchmarkArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

impl Common {
    pub fn require_out(&self) -> CliResult<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Usage("--out <DIR> is required".into()))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub speakers: Option<usize>,
    /// Utterances per speaker.
    #[arg(long)]
    pub utterances: Option<usize>,
    /// Utterance length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    #[arg(long)]
    pub layers_per_stack: Option<usize>,
    #[arg(long)]
    pub stacks: Option<usize>,
    /// Sets residual, gate and skip widths together.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub mixtures: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus root containing manifest.txt.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total optimizer updates.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Items per update.
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// Global-norm clip threshold.
    #[arg(long, conflicts_with = "no_clip")]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Train only on this utterance id (repeatable).
    #[arg(long = "utterance")]
    pub utterances: Vec<String>,
    #[command(flatten)]
    pub network: NetworkArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Mean,
    Mode,
    Sample,
}

impl RuleArg {
    pub fn name(self) -> &'static str {
        match self {
            RuleArg::Mean => "mean",
            RuleArg::Mode => "mode",
            RuleArg::Sample => "sample",
        }
    }
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Invert utterances of this corpus, with references in the overlays.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Corpus split to invert.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    /// Restrict corpus mode to this utterance id (repeatable).
    #[arg(long = "utterance")]
    pub utterances: Vec<String>,
    /// Normalization statistics file; overrides checkpoint metadata.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Speaker whose checkpoint statistics apply to file inputs.
    #[arg(long)]
    pub speaker: Option<String>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// WAV files or `.mel` feature tensors; glob patterns are expanded.
    pub inputs: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory searched recursively for predicted `<id>.traj` files.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Corpus root; references and speaker labels come from its manifest.
    #[arg(long, conflicts_with = "reference")]
    pub corpus: Option<PathBuf>,
    /// Directory searched recursively for reference `<id>.traj` files.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Append the published mean scores to the text report.
    #[arg(long)]
    pub paper_reference: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: Common,
    /// Benchmark this checkpoint instead of a randomly initialized network.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Generated frames.
    #[arg(long, default_value_t = 1000)]
    pub frames: usize,
    /// Total layer counts to sweep, e.g. `1,10,40`; uses the configured
    /// network when absent.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[command(flatten)]
    pub network: NetworkArgs,
}
