mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use goldsel::anchors::Method;
use goldsel::dataset::Format;
use goldsel::scoring::OverflowPolicy;
use goldsel::ErrorKind;

use config::{BackendSpec, ConfigError, DataError};

/// Select instruction-tuning data by how much each example helps as a
/// one-shot demonstration.
#[derive(Debug, Parser)]
#[command(name = "goldsel", version)]
struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Anchor-set construction.
    #[command(subcommand)]
    Anchors(AnchorsCommand),
    /// Dataset scoring.
    #[command(subcommand)]
    Score(ScoreCommand),
    /// Export a subset chosen by golden score.
    Select(SelectArgs),
    /// Golden-score distribution and threshold counts.
    Report(ReportArgs),
    /// Numerical check of the linear-attention decomposition.
    DualityDemo(DualityArgs),
    /// Show and validate a store, anchor, manifest, table or config file.
    Inspect(InspectArgs),
}

#[derive(Debug, Subcommand)]
enum AnchorsCommand {
    /// Sample anchors from a dataset and write an anchor file.
    Build(AnchorsBuildArgs),
}

#[derive(Debug, Subcommand)]
enum ScoreCommand {
    /// Score every candidate against the anchors, resuming an existing store.
    Run(ScoreRunArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// Dataset format; inferred from the extension by default.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Warn about and skip malformed records instead of failing.
    #[arg(long)]
    skip_bad: bool,
    /// Prompt template file.
    #[arg(long, value_name = "FILE")]
    template: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    JsonArray,
    Jsonl,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::JsonArray => Format::JsonArray,
            FormatArg::Jsonl => Format::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Random,
    Kmeans,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Random => Method::Random,
            MethodArg::Kmeans => Method::Kmeans,
        }
    }
}

#[derive(Debug, Args)]
struct AnchorsBuildArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Number of anchors (clusters for K-Means).
    #[arg(long, visible_alias = "k")]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Backend whose embeddings drive K-Means.
    #[arg(long)]
    backend: Option<BackendSpec>,
    /// Use feature-hash embeddings instead of the backend's.
    #[arg(long)]
    feature_hash: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Anchor file to write.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreRunArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Anchor file.
    #[arg(long, value_name = "FILE")]
    anchors: Option<PathBuf>,
    /// `hash-mock[:SEED[:WINDOW]]`, `table:PATH`, an http(s):// base URL, or a JSON backend file.
    #[arg(long)]
    backend: Option<BackendSpec>,
    /// Model name sent to an HTTP backend.
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the HTTP API key.
    #[arg(long, value_name = "VAR")]
    api_key_env: Option<String>,
    /// Maximum tokens per scoring request.
    #[arg(long)]
    context_budget: Option<usize>,
    /// Score store (JSON lines).
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// count-as-non-improvement, skip-reduces-m or truncate-demonstration-left.
    #[arg(long)]
    overflow_policy: Option<OverflowPolicy>,
    #[arg(long)]
    tie_epsilon: Option<f64>,
    /// Leave anchor source examples out of the candidate pool.
    #[arg(long)]
    exclude_anchors: bool,
    /// Discard an existing store instead of resuming it.
    #[arg(long)]
    fresh: bool,
    /// Write the golden-score table here once the run is complete.
    #[arg(long, value_name = "FILE")]
    table_out: Option<PathBuf>,
    /// Stop after this many new rows (the run can be resumed later).
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Debug, Args)]
#[group(id = "predicate", required = true, multiple = false, args = ["gt", "le", "top_frac", "top_k"])]
struct SelectArgs {
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    #[command(flatten)]
    data: DatasetArgs,
    /// Keep gs > TAU.
    #[arg(long, value_name = "TAU")]
    gt: Option<f64>,
    /// Keep gs <= TAU.
    #[arg(long, value_name = "TAU")]
    le: Option<f64>,
    /// Keep the top fraction P (0 < P <= 1).
    #[arg(long, value_name = "P")]
    top_frac: Option<f64>,
    /// Keep the top K.
    #[arg(long, value_name = "K")]
    top_k: Option<usize>,
    #[arg(long)]
    tie_epsilon: Option<f64>,
    /// Subset file to write; its format follows the extension unless --out-format is given.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    out_format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Comma-separated bucket edges covering [0, 1].
    #[arg(long, value_delimiter = ',')]
    edges: Option<Vec<f64>>,
    /// Comma-separated thresholds for the count table.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    tie_epsilon: Option<f64>,
    /// Write the JSON report here.
    #[arg(long, value_name = "FILE")]
    json_out: Option<PathBuf>,
    /// Write "x,y" histogram data here.
    #[arg(long, value_name = "FILE")]
    plot_out: Option<PathBuf>,
    /// Print JSON instead of the text table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct DualityArgs {
    #[arg(long, default_value_t = 16)]
    d_in: usize,
    #[arg(long, default_value_t = 8)]
    d_out: usize,
    #[arg(long, default_value_t = 5)]
    n_ins: usize,
    #[arg(long, default_value_t = 7)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random instances checked.
    #[arg(long, default_value_t = 100)]
    instances: usize,
}

#[derive(Debug, Args)]
struct InspectArgs {
    file: PathBuf,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_INTERRUPTED: u8 = 130;

/// Exit code for an error, from the first classifiable cause in its chain.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<DataError>() {
            return EXIT_DATA;
        }
        let kind = if let Some(e) = cause.downcast_ref::<goldsel::Error>() {
            Some(e.kind())
        } else if let Some(e) = cause.downcast_ref::<goldsel::dataset::DatasetError>() {
            Some(e.kind())
        } else if let Some(e) = cause.downcast_ref::<goldsel::backend::BackendError>() {
            Some(e.kind())
        } else if let Some(e) = cause.downcast_ref::<goldsel::anchors::AnchorError>() {
            Some(e.kind())
        } else if let Some(e) = cause.downcast_ref::<goldsel::scoring::ScoringError>() {
            Some(e.kind())
        } else if let Some(e) = cause.downcast_ref::<goldsel::scoring::StoreError>() {
            Some(e.kind())
        } else if let Some(e) = cause.downcast_ref::<goldsel::selection::SelectionError>() {
            Some(e.kind())
        } else if cause.is::<goldsel::duality::DualityError>() {
            Some(ErrorKind::Config)
        } else {
            None
        };
        match kind {
            Some(ErrorKind::Config) => return EXIT_CONFIG,
            Some(ErrorKind::Backend) => return EXIT_BACKEND,
            Some(ErrorKind::Data) => return EXIT_DATA,
            None => {}
        }
    }
    if err.chain().any(|c| c.is::<std::io::Error>()) {
        EXIT_DATA
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli) {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::Interrupted) => ExitCode::from(EXIT_INTERRUPTED),
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
