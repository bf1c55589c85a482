//! `uhd`: train, index, search, evaluate and analyze UHD sparse retrieval
//! models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uhd_core::ErrorKind;

#[derive(Parser, Debug)]
#[command(
    name = "uhd",
    version,
    about = "Ultra-high-dimensional sparse retrieval"
)]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the seeded synthetic topic corpus.
    Synth(SynthArgs),
    /// Train a model from `query TAB positive TAB negative` triples.
    Train(TrainArgs),
    /// Encode a collection and write an inverted index.
    Index(IndexArgs),
    /// Search an index with one query or a queries file.
    Search(SearchArgs),
    /// Compute ranking metrics of a run against qrels.
    Eval(EvalArgs),
    /// Grid-search per-bucket weights on a rerank set.
    Tune(TuneArgs),
    /// Write density, activation and dimension-interpretation CSVs.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub triples: PathBuf,
    /// JSON training configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint path (UHDW).
    #[arg(long)]
    pub out: PathBuf,
    /// Loss CSV path; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configuration's step budget.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Collection TSV, `doc_id TAB text`.
    #[arg(
        long,
        conflicts_with = "embeddings",
        required_unless_present = "embeddings"
    )]
    pub collection: Option<PathBuf>,
    /// Precomputed document embeddings (UHDE).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Index path (UHDI).
    #[arg(long)]
    pub out: PathBuf,
    /// Winners per token at encoding time.
    #[arg(long)]
    pub infer_k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A single query; prints `rank docid score` lines.
    #[arg(long, conflicts_with_all = ["queries", "query_embeddings"])]
    pub query: Option<String>,
    /// Queries TSV, `query_id TAB text`; writes a TREC run.
    #[arg(long, conflicts_with = "query_embeddings")]
    pub queries: Option<PathBuf>,
    /// Precomputed query embeddings (UHDE); writes a TREC run.
    #[arg(long)]
    pub query_embeddings: Option<PathBuf>,
    /// Run file path for batch mode; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub infer_k: Option<usize>,
    /// Per-bucket query weights, colon separated, e.g. `1:0.5:1`.
    #[arg(long)]
    pub weights: Option<String>,
    /// Run tag written in the last column.
    #[arg(long, default_value = "uhd")]
    pub tag: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated metrics: `mrr@K`, `recall@K`.
    #[arg(long, default_value = "mrr@10,recall@100,recall@1000")]
    pub metrics: String,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Candidate run; each query's ranked documents form its rerank list.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub collection: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// `thirds`, `tenths`, or comma-separated candidate weights shared by
    /// all buckets.
    #[arg(long, default_value = "thirds")]
    pub grid: String,
    /// Also report the per-query ideal-bucket oracle.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub infer_k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Queries TSV, `query_id TAB text`.
    #[arg(long)]
    pub queries: PathBuf,
    /// Output directory; with a single analysis and no directory the CSV
    /// goes to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `length,mean_density` per query token length.
    #[arg(long)]
    pub density: bool,
    /// `dim,count` activation frequency.
    #[arg(long)]
    pub activation: bool,
    /// `dim,term,count` terms co-occurring with each dimension.
    #[arg(long)]
    pub interpret: bool,
    /// Bucket position analysed by `--activation` and `--interpret`.
    #[arg(long, default_value_t = 0)]
    pub bucket: usize,
    #[arg(long, default_value_t = uhd_core::eval::DEFAULT_MIN_TERM_COUNT)]
    pub min_count: usize,
    #[arg(long)]
    pub infer_k: Option<usize>,
}

/// An invocation error detected by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<uhd_core::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data | ErrorKind::Io => 3,
                ErrorKind::Numeric => 4,
            };
        }
    }
    3
}

/// The reader of standard output went away, as with `uhd search ... | head`.
fn closed_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause
            .downcast_ref::<std::io::Error>()
            .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Index(a) => commands::index(a),
        Command::Search(a) => commands::search(a),
        Command::Eval(a) => commands::eval(a),
        Command::Tune(a) => commands::tune(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if closed_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
