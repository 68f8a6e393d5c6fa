use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use hqh::eval::ThresholdBasis;
use hqh::rotation::RotationMethod;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "hqh",
    version,
    about = "Hypercubic quantization hashing: fit, encode, evaluate and check bounds",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for parallel sections (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file of flag values; flags on the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a hashing model from a dataset.
    Fit(FitArgs),
    /// Encode a dataset with a saved model.
    Encode(EncodeArgs),
    /// Retrieval experiment (MAP@k), batch or online.
    Eval(EvalArgs),
    /// Generate a clustered synthetic dataset.
    Synth(SynthArgs),
    /// Monte-Carlo check of a sketch bound.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Near-zero coefficient CDF before and after the model's rotation.
    Nearzero(NearzeroArgs),
    /// Describe a model, codes or dataset file.
    Info(InfoArgs),
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Orthant-margin bound and optimality of the uniformizing rotation.
    Th1(Th1Args),
    /// Probability that nearby points get different sketches.
    Th2(Th2Args),
    /// Bit-agreement tail bound for a boundary-case pair.
    Th3(Th3Args),
}

fn parse_method(s: &str) -> Result<RotationMethod, String> {
    s.parse().map_err(|e: hqh::error::HqhError| e.to_string())
}

fn parse_basis(s: &str) -> Result<ThresholdBasis, String> {
    match s.to_ascii_lowercase().as_str() {
        "training" | "train" => Ok(ThresholdBasis::Training),
        "queries" | "query" => Ok(ThresholdBasis::Queries),
        other => Err(format!("unknown threshold basis `{other}` (training, queries)")),
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FitArgs {
    /// Training data (.fvecs, or CSV with one point per row).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "unifdiag", value_parser = parse_method)]
    pub method: RotationMethod,
    /// Code length.
    #[arg(long)]
    pub c: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub itq_iters: usize,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Codes file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Batch,
    Online,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Dataset; queries are sampled from it per seed unless --queries is given.
    #[arg(long)]
    pub data: PathBuf,
    /// Fixed query set; --data is then used whole as the training set.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Batch)]
    pub mode: Mode,
    /// Methods to compare (default: all methods the mode supports).
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<RotationMethod>>,
    /// Code lengths.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64])]
    pub c: Vec<usize>,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    pub n_queries: usize,
    /// Neighbor radius rank as a fraction of the training set.
    #[arg(long, default_value_t = 0.01)]
    pub frac: f64,
    /// Points the neighbor radius is averaged over.
    #[arg(long, default_value = "training", value_parser = parse_basis)]
    pub threshold_basis: ThresholdBasis,
    /// MAP cutoff.
    #[arg(long, default_value_t = 2000)]
    pub k: usize,
    #[arg(long, default_value_t = 50)]
    pub itq_iters: usize,
    /// Online mode: samples between checkpoints.
    #[arg(long, default_value_t = 5)]
    pub checkpoint: usize,
    /// Online mode: samples to stream.
    #[arg(long, default_value_t = 3000)]
    pub max_samples: usize,
    /// Online mode: forgetting factor.
    #[arg(long, default_value_t = 0.99)]
    pub beta: f64,
    /// Online mode: samples between rotation refits.
    #[arg(long, default_value_t = 5)]
    pub refit_every: usize,
    /// Record wall-clock times (makes reports non-reproducible).
    #[arg(long)]
    pub timing: bool,
    /// CSV report path (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a JSON summary of final MAP values.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    pub n_clusters: usize,
    #[arg(long, default_value_t = 1000)]
    pub points_per_cluster: usize,
    #[arg(long, default_value_t = 960)]
    pub d: usize,
    #[arg(long, default_value_t = 10.0)]
    pub centroid_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset to write (.fvecs or CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Labels file (default: <out>.labels).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct NearzeroArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Ascending margins.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5])]
    pub eps: Vec<f64>,
    /// Read --eps as multiples of the root mean projected variance.
    #[arg(long)]
    pub relative: bool,
    /// CSV path (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct InfoArgs {
    /// Model, codes or dataset file; omitted prints build information.
    pub path: Option<PathBuf>,
}

/// Covariance of the Gaussian projections under test.
#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SigmaArgs {
    /// Diagonal covariance entries.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', conflicts_with = "sigma")]
    pub diag: Option<Vec<f64>>,
    /// Full covariance as a headerless CSV matrix.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Dimension of the isotropic default.
    #[arg(long, default_value_t = 16)]
    pub c: usize,
    /// Variance of the isotropic default.
    #[arg(long, default_value_t = 10.0)]
    pub variance: f64,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Th1Args {
    #[command(flatten)]
    #[serde(flatten)]
    pub sigma: SigmaArgs,
    /// Orthant margin.
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: usize,
    /// Random rotations the uniformizing rotation is compared with.
    #[arg(long, default_value_t = 1000)]
    pub haar: usize,
    /// Rotation whose margins are checked.
    #[arg(long, default_value = "unifdiag", value_parser = parse_method)]
    pub rotation: RotationMethod,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Th2Args {
    #[command(flatten)]
    #[serde(flatten)]
    pub sigma: SigmaArgs,
    /// Maximum pair distance.
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long, default_value_t = 100_000)]
    pub pairs: usize,
    #[arg(long, default_value = "unifdiag", value_parser = parse_method)]
    pub rotation: RotationMethod,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Th3Args {
    /// Norm scale.
    #[arg(long, default_value_t = 1.0)]
    pub l: f64,
    /// Relative norm spread.
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    /// Fraction of norm lost by the projection.
    #[arg(long, default_value_t = 0.02)]
    pub eps_pca: f64,
    /// Pair distance.
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    /// Slack in the agreement floor.
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Code length.
    #[arg(long, default_value_t = 64)]
    pub c: usize,
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
