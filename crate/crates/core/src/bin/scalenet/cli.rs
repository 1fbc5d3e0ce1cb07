use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use scalenet::harness::{ScaleColumn, TestMethod};
use scalenet::model::{Comb1, Comb2, Family};
use scalenet::scales::Combine;
use scalenet::SelfLoopMode;

#[derive(Debug, Parser)]
#[command(
    name = "scalenet",
    version,
    about = "Node classification on directed graphs with scaled adjacency aggregation"
)]
pub struct Cli {
    /// Cap on harness worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run harness loops on the calling thread only.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Directory for the run manifest and output files.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset statistics as JSON.
    Stats(StatsArgs),
    /// Dump a scaled adjacency or proximity matrix.
    Scale(ScaleArgs),
    /// Train one configuration on one split or on every split.
    Train(TrainArgs),
    /// Per-scale accuracy table as TSV.
    ReportScales(ReportArgs),
    /// Grid search with a leaderboard.
    Gridsearch(GridArgs),
    /// Wilcoxon signed-rank test between two accuracy lists.
    Compare(CompareArgs),
    /// Write a synthetic directed block-model dataset.
    Synth(SynthArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Stats(_) => "stats",
            Command::Scale(_) => "scale",
            Command::Train(_) => "train",
            Command::ReportScales(_) => "report-scales",
            Command::Gridsearch(_) => "gridsearch",
            Command::Compare(_) => "compare",
            Command::Synth(_) => "synth",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset directory with edges.tsv, features.csv, labels.txt and splits.json.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Number of classes; defaults to the largest label plus one.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub comb1: Option<Comb1>,
    #[arg(long)]
    pub comb2: Option<Comb2>,
    #[arg(long)]
    pub selfloop: Option<SelfLoopMode>,
    #[arg(long)]
    pub selfloop_higher: Option<SelfLoopMode>,
    #[arg(long)]
    pub use_bn: Option<bool>,
    #[arg(long)]
    pub use_relu: Option<bool>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr_patience: Option<usize>,
    #[arg(long)]
    pub lr_factor: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// JSON file with optional "model" and "train" objects.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Split whose training nodes define the imbalance ratio.
    #[arg(long, default_value_t = 0)]
    pub split: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatrixFormat {
    Mtx,
    Edges,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CombineArg {
    Union,
    Intersect,
}

impl From<CombineArg> for Combine {
    fn from(c: CombineArg) -> Self {
        match c {
            CombineArg::Union => Combine::Union,
            CombineArg::Intersect => Combine::Intersect,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["data", "edges"])))]
#[command(group(ArgGroup::new("kind").required(true).args(["word", "proximity"])))]
pub struct ScaleArgs {
    /// Dataset directory; only the edges and the node count are used.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Bare edge list.
    #[arg(long, value_name = "FILE")]
    pub edges: Option<PathBuf>,
    /// Node count for a bare edge list; defaults to the largest index plus one.
    #[arg(long, requires = "edges")]
    pub nodes: Option<usize>,
    /// Word over {A, T}, e.g. AT for A·Aᵀ.
    #[arg(long)]
    pub word: Option<String>,
    /// Proximity order k ≥ 2.
    #[arg(long)]
    pub proximity: Option<usize>,
    #[arg(long, value_enum, default_value_t = CombineArg::Union, requires = "proximity")]
    pub combine: CombineArg,
    /// Keep self-loops generated inside proximity products.
    #[arg(long, requires = "proximity")]
    pub no_prune: bool,
    #[arg(long, default_value_t = SelfLoopMode::Keep)]
    pub selfloops: SelfLoopMode,
    /// Drop the edges of A and Aᵀ from the result.
    #[arg(long)]
    pub remove_shared: bool,
    #[arg(long, value_enum, default_value_t = MatrixFormat::Mtx)]
    pub format: MatrixFormat,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Train on this split only and print a single run; otherwise every split.
    #[arg(long)]
    pub split: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Columns to train, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<ScaleColumn>>,
    /// Number of leading splits to use.
    #[arg(long, default_value_t = 1)]
    pub splits: usize,
    /// Skip the shared-edges-removed variants.
    #[arg(long)]
    pub no_shared: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Search space JSON, layered over the base config.
    #[arg(long, value_name = "FILE", conflicts_with = "full")]
    pub space: Option<PathBuf>,
    /// The full published search grid.
    #[arg(long)]
    pub full: bool,
    /// Number of leading splits to use; all when absent.
    #[arg(long)]
    pub splits: Option<usize>,
    /// Leaderboard rows printed to stdout.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Normal,
}

impl From<MethodArg> for TestMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exact => TestMethod::Exact,
            MethodArg::Normal => TestMethod::NormalApprox,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// First accuracy list: a results JSON, a JSON array or plain numbers.
    pub a: PathBuf,
    /// Second accuracy list, paired with the first.
    pub b: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Homophilic,
    Heterophilic,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub nodes: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = ProfileArg::Homophilic)]
    pub profile: ProfileArg,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    /// Fraction of nodes without in-edges (heterophilic profile).
    #[arg(long)]
    pub starved_fraction: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub splits: usize,
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Subsample every training set to this largest/smallest class ratio.
    #[arg(long)]
    pub imbalance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run. Outputs go to --out-dir when
    /// given, otherwise to the recorded directory.
    pub manifest: PathBuf,
}
