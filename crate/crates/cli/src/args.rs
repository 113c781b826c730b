//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "excir", version, about = "Correlation impact ratio attribution and explanation checks")]
pub struct Cli {
    /// Worker threads; 0 uses every core. Results do not depend on this.
    #[arg(long, global = true, env = "EXCIR_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-feature CIR against one output column.
    Score(ScoreArgs),
    /// Block CIR through canonical correlation of feature groups.
    Block(BlockArgs),
    /// Class-conditioned or multi-output CIR.
    Ccir(CcirArgs),
    /// Subsample, run the similarity gates and report sample-size bounds.
    LwCheck(LwCheckArgs),
    /// Bootstrap confidence intervals and rank stability.
    Bootstrap(BootstrapArgs),
    /// Faithfulness protocol against a permutation-importance baseline.
    Eval(EvalArgs),
    /// Write a synthetic benchmark CSV and its ground-truth sidecar.
    SynthGen(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Midmean,
    Correlation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeArg {
    None,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Regression,
    Logit,
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskArg {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Output column(s); several names are comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub target: Vec<String>,
    /// Columns to drop from the features (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// Missing-value handling.
    #[arg(long, value_enum, default_value = "none")]
    pub impute: ImputeArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// JSON report path; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "midmean")]
    pub mode: ModeArg,
    /// Number of top features listed in the report.
    #[arg(long, default_value_t = 8)]
    pub head_k: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BlockArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Block spec JSON `{"blocks": {name: [column indices]}}`; features not
    /// listed become singleton blocks.
    #[arg(long)]
    pub blocks: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "midmean")]
    pub mode: ModeArg,
    /// Covariance ridge: `auto` or a nonnegative number.
    #[arg(long, default_value = "auto")]
    pub ridge: String,
    /// Canonical pairs aggregated per block.
    #[arg(long, default_value_t = 1)]
    pub top_r: usize,
    /// Aggregation over the top-r pairs: sum or max.
    #[arg(long, default_value = "sum")]
    pub aggregation: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorArg {
    UnitAxis,
    Cca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeArg {
    Uniform,
    PerOutputCorr,
    CanonicalProjection,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CcirArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Score for this output column index (class-conditioned mode).
    #[arg(long)]
    pub class: Option<usize>,
    /// Class selector in class-conditioned mode.
    #[arg(long, value_enum, default_value = "unit-axis")]
    pub selector: SelectorArg,
    /// Weighting in multi-output mode.
    #[arg(long, value_enum, default_value = "uniform")]
    pub weights: SchemeArg,
    /// Fixed convex weights over the outputs (comma-separated); overrides --weights.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, value_enum, default_value = "midmean")]
    pub mode: ModeArg,
    /// Covariance ridge for the CCA selector: `auto` or a nonnegative number.
    #[arg(long, default_value = "auto")]
    pub ridge: String,
    /// Interpretation of the output columns.
    #[arg(long, value_enum, default_value = "logit")]
    pub kind: KindArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LwCheckArgs {
    /// Input CSV; `--target` names the label column.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "classification")]
    pub task: TaskArg,
    /// Fraction of the training pool kept in the lightweight subsample.
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    /// Gate thresholds JSON `{"alpha","beta","gamma","eps_acc"}`
    /// [default: alpha 0.5, beta 0.05, gamma 0.1, eps_acc 0.03].
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Subsample seeds tried (seed, seed+1, ...) before giving up.
    #[arg(long, default_value_t = 1)]
    pub max_attempts: usize,
    /// Keep label proportions in the subsample.
    #[arg(long)]
    pub stratify: bool,
    /// MMD permutations.
    #[arg(long, default_value_t = 200)]
    pub permutations: usize,
    /// Head size for rank agreement.
    #[arg(long, default_value_t = 8)]
    pub head_k: usize,
    #[arg(long, value_enum, default_value = "correlation")]
    pub mode: ModeArg,
    /// Confidence parameter of the sample-size bounds.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Projection tolerance for the bound; bounds are skipped without all three epsilons.
    #[arg(long)]
    pub eps_proj: Option<f64>,
    #[arg(long)]
    pub eps_mmd: Option<f64>,
    #[arg(long)]
    pub eps_kl: Option<f64>,
    /// Projection constant C.
    #[arg(long, default_value_t = 1.0)]
    pub c_proj: f64,
    /// Kernel bound K.
    #[arg(long, default_value_t = 1.0)]
    pub kernel_bound: f64,
    /// KL constant C_KL.
    #[arg(long, default_value_t = 1.0)]
    pub c_kl: f64,
    /// Runtime profile `n:seconds,n:seconds,...` for the budget bound.
    #[arg(long)]
    pub profile: Option<String>,
    /// Time budget in seconds for the budget bound.
    #[arg(long)]
    pub t_max: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Bootstrap replicates.
    #[arg(long = "B", alias = "b", default_value_t = 100)]
    pub b: usize,
    #[arg(long, default_value_t = 8)]
    pub head_k: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "midmean")]
    pub mode: ModeArg,
    /// Score blocks from this spec instead of single features.
    #[arg(long)]
    pub blocks: Option<PathBuf>,
    /// Resample within output quartiles.
    #[arg(long)]
    pub stratified: bool,
    /// Also report percentile intervals.
    #[arg(long)]
    pub percentile: bool,
    /// Include every replicate's scores in the report.
    #[arg(long)]
    pub keep_replicates: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Input CSV; `--target` names the label column.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "classification")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Split seeds compared in the significance tests.
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    /// Points on the deletion and insertion curves.
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub head_k: usize,
    #[arg(long, value_enum, default_value = "midmean")]
    pub mode: ModeArg,
    /// Permutation-importance repetitions per feature.
    #[arg(long, default_value_t = 5)]
    pub permutation_reps: usize,
    /// Feature-noise levels (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.2,1")]
    pub sigma: Vec<f64>,
    /// Repetitions per noise level.
    #[arg(long, default_value_t = 20)]
    pub noise_reps: usize,
    /// BH false-discovery level.
    #[arg(long, default_value_t = 0.1)]
    pub q: f64,
    /// Second CSV with the same columns; CIR drift against it is reported.
    #[arg(long)]
    pub drift_input: Option<PathBuf>,
    /// Directory for two-column curve CSVs; defaults to the report's directory.
    #[arg(long)]
    pub curves_dir: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyArg {
    Vehicular,
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "vehicular")]
    pub family: FamilyArg,
    /// Rows.
    #[arg(long, default_value_t = 6000)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Within-block equicorrelation (vehicular) [default: 0.5].
    #[arg(long)]
    pub rho_block: Option<f64>,
    /// Mean event probability (vehicular) [default: 0.15].
    #[arg(long)]
    pub event_rate: Option<f64>,
    /// Output noise sd [default: 0.3 linear, 0.5 nonlinear].
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// CSV path; the ground truth goes to `<stem>.truth.json` beside it.
    #[arg(long, short)]
    pub output: PathBuf,
}
