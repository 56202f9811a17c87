use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Sparse GP classification with inducing inputs.
///
/// Every flag can also be set through an environment variable named
/// `VIGP_<FLAG>` (upper case, dashes as underscores). Command-line values win.
#[derive(Debug, Parser)]
#[command(name = "vigp", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one strategy, write the model file and its trace.
    Train(TrainArgs),
    /// Load a model and report accuracy on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Run several strategies (and the svi step-rate grid) on one split and one inducing set.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceFormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Se,
    Matern,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Training data file (or the full dataset when no test file is given).
    #[arg(long, env = "VIGP_DATA")]
    pub data: PathBuf,

    /// Input format; `.csv` files default to csv, anything else to libsvm.
    #[arg(long, value_enum, env = "VIGP_FORMAT")]
    pub format: Option<FormatArg>,

    /// Separate test file. Without it a random split of --data is used.
    #[arg(long, env = "VIGP_TEST_DATA")]
    pub test_data: Option<PathBuf>,

    #[arg(long, default_value_t = 0.2, env = "VIGP_TEST_FRACTION")]
    pub test_fraction: f64,

    /// Raw labels of the positive and negative class, e.g. `g,h`.
    #[arg(long, env = "VIGP_LABEL_MAP")]
    pub label_map: Option<String>,

    /// Name used in output file names; defaults to the data file stem.
    #[arg(long, env = "VIGP_NAME")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Number of inducing inputs (k-means centres).
    #[arg(long, default_value_t = 50, env = "VIGP_M")]
    pub m: usize,

    #[arg(long, default_value_t = 0, env = "VIGP_SEED")]
    pub seed: u64,

    /// Analytic (ξ, μ, Σ) refreshes per outer iteration.
    #[arg(long, default_value_t = 3, env = "VIGP_N_UPD")]
    pub n_upd: usize,

    /// Function-evaluation budget of each hyperparameter L-BFGS-B call.
    #[arg(long, default_value_t = 5, env = "VIGP_N_FUN")]
    pub n_fun: usize,

    /// Outer iterations (epochs for svi_adadelta).
    #[arg(long, default_value_t = 200, env = "VIGP_MAX_EPOCHS")]
    pub max_epochs: usize,

    /// Minibatch size for svi_adadelta; 0 picks one from n.
    #[arg(long, default_value_t = 0, env = "VIGP_BATCH_SIZE")]
    pub batch_size: usize,

    /// Gauss-Hermite order of the svi likelihood expectation.
    #[arg(long, default_value_t = 20, env = "VIGP_QUAD_ORDER")]
    pub quad_order: usize,

    /// Wall-clock cap per run in seconds.
    #[arg(long, env = "VIGP_MAX_SECONDS")]
    pub max_seconds: Option<f64>,

    #[arg(long, value_enum, default_value = "se", env = "VIGP_KERNEL")]
    pub kernel: KernelArg,

    /// Initial signal variance.
    #[arg(long, default_value_t = 1.0, env = "VIGP_VARIANCE")]
    pub variance: f64,

    /// Initial length-scale; defaults to sqrt(d).
    #[arg(long, env = "VIGP_LENGTH_SCALE")]
    pub length_scale: Option<f64>,

    /// Matérn smoothness ν.
    #[arg(long, default_value_t = 1.5, env = "VIGP_SMOOTHNESS")]
    pub smoothness: f64,

    /// Initial noise variance on diag(K_nn); 0 switches the term off.
    #[arg(long, default_value_t = 0.01, env = "VIGP_NOISE")]
    pub noise: f64,

    /// Absolute jitter on diag(K_mm); defaults to 1e-6 times the initial variance.
    #[arg(long, env = "VIGP_JITTER")]
    pub jitter: Option<f64>,

    #[arg(long, value_enum, default_value = "csv", env = "VIGP_TRACE_FORMAT")]
    pub trace_format: TraceFormatArg,

    /// Output directory for traces (and the model file of `train`).
    #[arg(long, default_value = ".", env = "VIGP_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub fit: FitArgs,

    /// One of svi_adadelta, vi_jj, vi_taylor, vi_jj_full, vi_jj_hybrid.
    #[arg(long, default_value = "vi_jj", env = "VIGP_STRATEGY")]
    pub strategy: String,

    /// AdaDelta step rate for svi_adadelta (a single value here).
    #[arg(long, default_value = "1.0", env = "VIGP_STEP_RATES")]
    pub step_rates: String,

    /// Model file; defaults to `<out>/<dataset>_<strategy>.model`.
    #[arg(long, env = "VIGP_MODEL")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "VIGP_MODEL")]
    pub model: PathBuf,

    /// Labelled data to score.
    #[arg(long, env = "VIGP_DATA")]
    pub data: PathBuf,

    #[arg(long, value_enum, env = "VIGP_FORMAT")]
    pub format: Option<FormatArg>,

    #[arg(long, env = "VIGP_LABEL_MAP")]
    pub label_map: Option<String>,

    /// Gauss-Hermite order of the class-probability integral.
    #[arg(long, default_value_t = 32, env = "VIGP_QUAD_ORDER")]
    pub quad_order: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub fit: FitArgs,

    /// Comma-separated strategies; all five by default.
    #[arg(long, env = "VIGP_STRATEGIES")]
    pub strategies: Option<String>,

    /// Comma-separated AdaDelta step-rate grid for svi_adadelta.
    #[arg(long, default_value = "0.1,0.5,1.0", env = "VIGP_STEP_RATES")]
    pub step_rates: String,

    /// Run the jobs on separate threads.
    #[arg(long, env = "VIGP_PARALLEL")]
    pub parallel: bool,
}
