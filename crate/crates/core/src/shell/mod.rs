//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

mod commands;
mod config;
mod render;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use render::{
    delta_cell, ratio_cell, render_cross_markdown, render_plot, render_table, Format, RenderError,
    Table,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "stereo-audit",
    version,
    about = "Stereotype audits for chat models"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize StereoSet and/or CrowS-Pairs files into items.jsonl.
    Ingest(IngestArgs),
    /// Per-category train/test split of each source.
    Split(SplitArgs),
    /// Run every item through a backend and write evaluation records.
    Evaluate(EvaluateArgs),
    /// Aggregate records into tables, plots and deltas.
    Report(ReportArgs),
    /// Bag-of-words trigger words from evaluation records.
    Bow(BowArgs),
    /// Paraphrase training items and substitute valid rewrites.
    Augment(AugmentArgs),
    /// Write chat fine-tuning JSONL.
    ExportFinetune(ExportArgs),
    /// Upload a training file and start a remote fine-tuning job.
    FinetuneSubmit(SubmitArgs),
    /// Tabulate runs over (trained-on, evaluated-on, variant) cells.
    CrossEval(CrossEvalArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub stereoset: Option<PathBuf>,
    #[arg(long)]
    pub crowspairs: Option<PathBuf>,
    /// intersentence, intrasentence or both.
    #[arg(long)]
    pub portion: Option<String>,
    /// Comma-separated categories to keep.
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Train items per category for every source.
    #[arg(long)]
    pub per_category: Option<usize>,
    #[arg(long)]
    pub stereoset_per_category: Option<usize>,
    #[arg(long)]
    pub crowspairs_per_category: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// openai_http, mock_first, mock_gold or mock_uniform.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub auth_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Seed for mock_uniform.
    #[arg(long)]
    pub backend_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    /// Permutation seed; 0 keeps the original choice order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_cache: bool,
    /// Name of the records file (defaults to the backend kind).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub include_blank_context: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Records files; defaults to every file under <out>/records.
    #[arg(long)]
    pub records: Vec<PathBuf>,
    /// markdown, csv or json; repeatable.
    #[arg(long = "format")]
    pub formats: Vec<String>,
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub parseable_only: bool,
    #[arg(long, requires = "variant")]
    pub baseline: Option<PathBuf>,
    #[arg(long, requires = "baseline")]
    pub variant: Option<PathBuf>,
    /// Outcome compared between baseline and variant.
    #[arg(long, default_value = "stereotype")]
    pub key: String,
}

#[derive(Debug, Args)]
pub struct BowArgs {
    #[arg(long)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// by_mode, resolved_label or selection.
    #[arg(long)]
    pub rule: Option<String>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub items: PathBuf,
    /// t5_prefix or instruct.
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long, default_value = "augmented")]
    pub tag: String,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub mode: Option<String>,
    /// plain, bow_system or debias_system.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub bow_words: Vec<String>,
    /// Lexicon JSON whose pooled stereotype words feed bow_system.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub endpoint: String,
    #[arg(long)]
    pub auth_env: Option<String>,
    /// Poll until the job finishes.
    #[arg(long)]
    pub wait: bool,
    #[arg(long, default_value_t = 30)]
    pub poll_seconds: u64,
}

#[derive(Debug, Args)]
pub struct CrossEvalArgs {
    /// TRAIN:EVAL:VARIANT=RECORDS; repeatable.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    #[arg(long = "format")]
    pub formats: Vec<String>,
}

/// Error split by exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => EXIT_INVALID,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

pub(crate) trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let (kind, e) = match &failure {
                Failure::Invalid(e) => ("invalid input", e),
                Failure::Runtime(e) => ("error", e),
            };
            eprintln!("stereo-audit: {kind}: {e:#}");
            failure.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path).invalid()?,
        None => RunConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = commands::Context { config, out };
    match cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::Bow(a) => commands::bow(&ctx, a),
        Command::Augment(a) => commands::augment(&ctx, a),
        Command::ExportFinetune(a) => commands::export_finetune(&ctx, a),
        Command::FinetuneSubmit(a) => commands::finetune_submit(&ctx, a),
        Command::CrossEval(a) => commands::cross_eval(&ctx, a),
    }
}
