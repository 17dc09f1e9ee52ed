use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use volt3d::cost::CountConvention;
use volt3d::ConvFlavor;

/// Cost reports, parameter tables, training and evaluation for 3D
/// convolutional networks with standard, pseudo-3D and depthwise-separable
/// convolutions.
#[derive(Parser, Debug)]
#[command(name = "volt3d", version)]
pub struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "VOLT3D_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Per-layer parameter and MAC report with the reduction against standard convolutions.
    Params(ParamsArgs),
    /// MAC counts of one conv layer in all three flavors and their ratios.
    Flops(FlopsArgs),
    /// Writes a synthetic labeled voxel dataset.
    GenData(GenDataArgs),
    /// Trains a 3D VGG classifier.
    TrainCls(TrainClsArgs),
    /// Trains a reconstruction decoder from latent codes to 32^3 occupancy.
    TrainRec(TrainRecArgs),
    /// Evaluates a checkpoint on a dataset.
    Eval(EvalArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Rec6,
    Resrec6,
    Rec16,
    Resrec16,
    Vgg13,
    Vgg16,
    Vgg19,
}

impl Arch {
    /// `(depth, residual)` of a decoder.
    pub fn decoder(self) -> Option<(usize, bool)> {
        match self {
            Arch::Rec6 => Some((6, false)),
            Arch::Resrec6 => Some((6, true)),
            Arch::Rec16 => Some((16, false)),
            Arch::Resrec16 => Some((16, true)),
            _ => None,
        }
    }

    pub fn vgg(self) -> Option<usize> {
        match self {
            Arch::Vgg13 => Some(13),
            Arch::Vgg16 => Some(16),
            Arch::Vgg19 => Some(19),
            _ => None,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    #[value(alias = "std")]
    Standard,
    #[value(alias = "pd")]
    Pseudo,
    #[value(alias = "depthwise")]
    Dw,
}

impl From<Flavor> for ConvFlavor {
    fn from(f: Flavor) -> Self {
        match f {
            Flavor::Standard => ConvFlavor::Standard,
            Flavor::Pseudo => ConvFlavor::Pseudo,
            Flavor::Dw => ConvFlavor::Depthwise,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    /// Weights, depthwise/pointwise biases, batch-norm scale and shift.
    Paper,
    /// Everything a checkpoint stores, including batch-norm running statistics.
    All,
    /// Conv and linear weights only.
    Weights,
}

impl From<Convention> for CountConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Paper => CountConvention::PAPER,
            Convention::All => CountConvention::ALL,
            Convention::Weights => CountConvention::WEIGHTS,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Table,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Cls,
    Rec,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 20 epochs: 10 at 1e-5 then 10 at 1e-6.
    PaperCls,
    /// 120 epochs: 60 at 1e-6 then 60 at 1e-7, batches of 32.
    PaperRec,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Opt {
    Adam,
    Sgd,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[arg(long, value_enum)]
    pub arch: Arch,
    #[arg(long, value_enum, default_value = "standard")]
    pub flavor: Flavor,
    #[arg(long, value_enum, default_value = "paper")]
    pub convention: Convention,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// With `--format csv`, emit the per-layer rows instead of the comparison.
    #[arg(long)]
    pub layers: bool,
    /// VGG input resolution; only the first fully connected layer depends on it.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    /// Kernel edge length.
    #[arg(long)]
    pub k: usize,
    /// Input channels.
    #[arg(long)]
    pub cin: usize,
    /// Output channels.
    #[arg(long)]
    pub cout: usize,
    /// Output extent as `d,h,w`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dhw: Vec<usize>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Count multiplies in the naive reference kernels and require equality.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Dataset directory written by `gen-data`; synthesized in memory when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    pub samples: Option<usize>,
    #[arg(long, conflicts_with = "data")]
    pub resolution: Option<usize>,
    #[arg(long, conflicts_with = "data")]
    pub classes: Option<usize>,
    /// Seeds the data, the initialization and the batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 30)]
    pub samples: usize,
    #[arg(long, default_value_t = 16)]
    pub resolution: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "standard")]
    pub flavor: Flavor,
    #[command(flatten)]
    pub data: SynthArgs,
    /// Starts from a published schedule; explicit flags still override it.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Constant learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Piecewise schedule `epochs:lr,...`, e.g. `10:1e-5,10:1e-6`.
    #[arg(long, conflicts_with = "lr")]
    pub schedule: Option<String>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: Opt,
    #[arg(long, value_enum, default_value = "f32")]
    pub dtype: Precision,
    /// Channel widths are divided by this.
    #[arg(long)]
    pub width_divisor: Option<usize>,
    /// Stop once the eval-mode training metric reaches this value.
    #[arg(long)]
    pub stop_at: Option<f64>,
    /// Checkpoint path; the model description goes next to it with a `.net` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "history.csv")]
    pub history: PathBuf,
    /// Print one line per epoch to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct TrainClsArgs {
    #[arg(long, value_enum, default_value = "vgg13")]
    pub arch: Arch,
    /// Hidden fully connected widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct TrainRecArgs {
    #[arg(long, value_enum, default_value = "rec6")]
    pub arch: Arch,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Model description; defaults to the checkpoint path with a `.net` extension.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub data: SynthArgs,
    #[arg(long, value_enum, default_value = "f32")]
    pub dtype: Precision,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}
