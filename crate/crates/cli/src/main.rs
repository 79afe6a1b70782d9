//! `tflow`: transfer flow reports, clustering, benchmark splits and target
//! mixing from the command line.

mod commands;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tflow_core::clustering::Method;
use tflow_core::kernels::{KernelFamily, DEFAULT_MULTIPLIERS};
use tflow_core::TflowError;

#[derive(Debug, Parser)]
#[command(name = "tflow", version, about = "Transfer flow between labeled and unlabeled data")]
struct Cli {
    /// Worker threads (0 = available parallelism).
    #[arg(long, global = true, env = "TFLOW_THREADS", default_value_t = 0)]
    threads: usize,

    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transfer flow of representations under ground-truth labels (or
    /// cluster-derived labels with --pseudo-from).
    Flow(FlowArgs),
    /// Transfer flow under pseudo labels from clustering or a label file.
    PseudoFlow(FlowArgs),
    /// Cluster representations and write `index,cluster` labels.
    Cluster(ClusterArgs),
    /// Build a benchmark split plan from a class hierarchy.
    Split(SplitArgs),
    /// Generate a labeled synthetic dataset with simplex class centers.
    Synth(SynthArgs),
    /// Compare a supervised and a self-supervised flow report.
    Compare(CompareArgs),
    /// Mix one-hot ground-truth targets with soft pseudo labels.
    Mix(MixArgs),
    /// Append a `tag,flow,flow_std,accuracy` row for a flow report.
    PlotData(PlotDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Kmeans,
    Gmm,
    Agglo,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Kmeans => Method::KMeans,
            MethodArg::Gmm => Method::Gmm,
            MethodArg::Agglo => Method::Agglomerative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Gaussian,
    Laplacian,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelFamily::Gaussian,
            KernelArg::Laplacian => KernelFamily::Laplacian,
        }
    }
}

/// `auto` (mean pairwise distance) or a fixed positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
enum BandwidthBase {
    Auto,
    Value(f64),
}

impl fmt::Display for BandwidthBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthBase::Auto => f.write_str("auto"),
            BandwidthBase::Value(v) => write!(f, "{v}"),
        }
    }
}

fn parse_base(s: &str) -> Result<BandwidthBase, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(BandwidthBase::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(BandwidthBase::Value(v)),
        _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct ClusterOpts {
    /// Number of clusters (defaults to the number of labeled classes).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// GMM covariance ridge relative to the mean per-dimension variance.
    #[arg(long, default_value_t = 1e-6)]
    gmm_reg: f64,
    /// L2-normalize rows before clustering.
    #[arg(long)]
    l2_normalize: bool,
}

#[derive(Debug, Args)]
struct FlowArgs {
    /// Representation matrix (CSV or TFMX).
    #[arg(long)]
    reps: PathBuf,
    /// Label file, or the name of a label column in the reps CSV.
    #[arg(long)]
    labels: Option<String>,
    /// Derive labels by clustering the representations.
    #[arg(long, value_enum, conflicts_with = "pseudo_labels")]
    pseudo_from: Option<MethodArg>,
    /// Externally computed pseudo labels.
    #[arg(long)]
    pseudo_labels: Option<PathBuf>,
    #[command(flatten)]
    clustering: ClusterOpts,
    #[arg(long, value_enum, default_value = "gaussian")]
    kernel: KernelArg,
    /// Bandwidth multipliers applied to the base.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MULTIPLIERS)]
    bandwidths: Vec<f64>,
    #[arg(long, value_parser = parse_base, default_value = "auto")]
    bandwidth_base: BandwidthBase,
    /// Bootstrap replicates (0 disables the bootstrap).
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Require every row to be a probability vector.
    #[arg(long)]
    probabilities: bool,
    /// Report path; printed to standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also append a plot-data row to this CSV.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[arg(long, requires = "plot_data")]
    accuracy: Option<f64>,
    #[arg(long, requires = "plot_data")]
    tag: Option<String>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    reps: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    gmm_reg: f64,
    #[arg(long)]
    l2_normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Tab-separated `superclass<TAB>subclass` lines.
    #[arg(long)]
    hierarchy: PathBuf,
    #[arg(long)]
    labeled_per_super: usize,
    #[arg(long)]
    unlabeled_per_super: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Take subclasses in file order instead of shuffling.
    #[arg(long)]
    canonical: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    per_class: usize,
    /// Distance between any two class centers.
    #[arg(long)]
    sep: f64,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Report computed from supervised representations.
    #[arg(long)]
    a: PathBuf,
    /// Report computed from self-supervised representations.
    #[arg(long)]
    b: PathBuf,
}

#[derive(Debug, Args)]
struct MixArgs {
    /// Ground truth: a label file, or a TFMX matrix of one-hot rows.
    #[arg(long)]
    gt: PathBuf,
    /// Soft pseudo labels (rows on the simplex).
    #[arg(long, required_unless_present = "pl_from_logits", conflicts_with = "pl_from_logits")]
    pl: Option<PathBuf>,
    /// Compute pseudo labels from logits with Sinkhorn-Knopp.
    #[arg(long)]
    pl_from_logits: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    /// Weight of the ground-truth component.
    #[arg(long)]
    alpha: f64,
    /// Output matrix; CSV when the name ends in `.csv`, TFMX otherwise.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotDataArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    accuracy: Option<f64>,
    /// Row tag; defaults to the report file stem.
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Errors reported as `{"error": code, "message": ...}` with exit status 1.
#[derive(Debug)]
pub enum CliError {
    Core(TflowError),
    Report { path: PathBuf, detail: String },
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Report { .. } => "MalformedReport",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Report { path, detail } => {
                write!(f, "cannot read report {}: {detail}", path.display())
            }
        }
    }
}

impl From<TflowError> for CliError {
    fn from(e: TflowError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(TflowError::Io(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .parse_env("TFLOW_LOG")
        .init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("could not size thread pool: {e}");
        }
    }

    let result = match cli.command {
        Command::Flow(args) => commands::flow(args, false),
        Command::PseudoFlow(args) => commands::flow(args, true),
        Command::Cluster(args) => commands::cluster(args),
        Command::Split(args) => commands::split(args),
        Command::Synth(args) => commands::synth(args),
        Command::Compare(args) => commands::compare(args),
        Command::Mix(args) => commands::mix(args),
        Command::PlotData(args) => commands::plot_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.code(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}
