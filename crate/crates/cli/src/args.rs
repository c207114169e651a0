use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ranp::harness::data::TaskKind;
use ranp::{Aggregator, ImportanceMode, InitScheme, PruneMode, ResourceKind};

/// Resource-aware neuron pruning at initialization for 3D CNNs.
///
/// Exit codes: 0 success, 2 user error, 3 infeasible sparsity (some layer
/// would lose every neuron).
#[derive(Parser)]
#[command(name = "ranp", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Per-layer FLOPs, activation memory and parameters, optionally under masks.
    Resources(ResourcesArgs),
    /// Score neurons, select masks and write masks, importance dumps and a report.
    Prune(PruneArgs),
    /// Find the largest feasible sparsity by bisection and show the retained counts.
    Search(SearchArgs),
    /// Materialize masks into a slim network file with sliced weights.
    Refine(RefineArgs),
    /// Train a full, pruned or slim network on a synthetic task.
    Train(TrainArgs),
    /// Compare runs against the full-network baseline.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct NetArgs {
    /// Network: JSON config path, bundled name (mini-unet3d, mini-cls3d) or slim network file.
    #[arg(long)]
    pub net: String,
    /// Weight initialization for networks built from a config.
    #[arg(long, value_enum, default_value_t = InitArg::Glorot)]
    pub init: InitArg,
    /// Seeds initialization, synthetic data, random masks and the training shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SelectArgs {
    /// Pruning mode [default: ranp-f, or the mode implied by --resource].
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Resource whose cost drives reweighting: flops selects ranp-f, mem selects ranp-m.
    #[arg(long, value_enum)]
    pub resource: Option<ResourceArg>,
    /// Strength of the resource reweighting.
    #[arg(long, default_value_t = 11.0)]
    pub lambda: f64,
    /// Neuron score: magnitudes of parameter-mask gradients or of the neuron-mask gradient.
    #[arg(long, value_enum, default_value_t = ImportanceArg::Mpmg)]
    pub importance: ImportanceArg,
    /// Reduction over a neuron's parameter group.
    #[arg(long, value_enum, default_value_t = AggArg::Sum)]
    pub agg: AggArg,
    /// Batches of the pruning set used for scoring [default: one full pass].
    #[arg(long)]
    pub prune_batches: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args)]
pub struct DataArgs {
    /// Synthetic task [default: synth-seg for dense heads, synth-cls otherwise].
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Training samples; these also form the pruning set.
    #[arg(long, default_value_t = 24)]
    pub samples: usize,
    /// Held-out evaluation samples.
    #[arg(long, default_value_t = 8)]
    pub eval_samples: usize,
    /// Samples per batch for pruning and training.
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
}

#[derive(Args)]
pub struct SparsityArgs {
    /// Fraction of prunable neurons to remove, in [0, 1).
    #[arg(long, conflicts_with = "auto")]
    pub sparsity: Option<f64>,
    /// Use the largest feasible sparsity found by bisection.
    #[arg(long)]
    pub auto: bool,
    /// Bisection tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
}

#[derive(Args)]
pub struct ResourcesArgs {
    /// Network: JSON config path, bundled name or slim network file.
    #[arg(long)]
    pub net: String,
    /// Masks file (as written by `prune`) to apply before counting.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub sparsity: SparsityArgs,
    /// Output directory for masks.json, importance-*.json, importance.csv and report.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Bisection tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    /// Directory to write masks.json at the found sparsity.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Masks file to apply; without it the network is pruned with the selection flags.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub sparsity: SparsityArgs,
    /// Output directory for slim.bin and slim.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Prune a config network before training; omit for the full network.
    #[command(flatten)]
    pub sparsity: SparsityArgs,
    /// Training epochs.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Learning rate [default: 0.1 for synth-seg, 0.02 for synth-cls].
    #[arg(long)]
    pub lr: Option<f64>,
    /// CSV file for per-epoch loss and metrics.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Output directory for run.json and trained.bin.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run reports (report.json, run.json) or CSV tables from an earlier `report`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Write the table to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vanilla,
    Weighted,
    RanpF,
    RanpM,
    Random,
    Layerwise,
}

impl From<ModeArg> for PruneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vanilla => PruneMode::Vanilla,
            ModeArg::Weighted => PruneMode::Weighted,
            ModeArg::RanpF => PruneMode::RanpF,
            ModeArg::RanpM => PruneMode::RanpM,
            ModeArg::Random => PruneMode::Random,
            ModeArg::Layerwise => PruneMode::Layerwise,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResourceArg {
    Flops,
    Mem,
}

impl From<ResourceArg> for ResourceKind {
    fn from(r: ResourceArg) -> Self {
        match r {
            ResourceArg::Flops => ResourceKind::Flops,
            ResourceArg::Mem => ResourceKind::Memory,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImportanceArg {
    Mpmg,
    Mnmg,
}

impl From<ImportanceArg> for ImportanceMode {
    fn from(i: ImportanceArg) -> Self {
        match i {
            ImportanceArg::Mpmg => ImportanceMode::Mpmg,
            ImportanceArg::Mnmg => ImportanceMode::Mnmg,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggArg {
    Sum,
    Mean,
    Max,
}

impl From<AggArg> for Aggregator {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Sum => Aggregator::Sum,
            AggArg::Mean => Aggregator::Mean,
            AggArg::Max => Aggregator::Max,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Glorot,
    Orthogonal,
}

impl From<InitArg> for InitScheme {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Glorot => InitScheme::Glorot,
            InitArg::Orthogonal => InitScheme::Orthogonal,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    SynthSeg,
    SynthCls,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::SynthSeg => TaskKind::Segmentation,
            TaskArg::SynthCls => TaskKind::Classification,
        }
    }
}
