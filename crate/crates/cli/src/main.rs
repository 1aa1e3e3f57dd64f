//! `xce` — evaluate, compare, and report biomedical entity extraction.
//!
//! Subcommands map one-to-one onto library operations: `convert` and `map`
//! transform corpora, `evaluate`, `overlap`, `distribution`, and `dedup`
//! measure them, `link` and `fetch` produce prediction layers, and `report`
//! renders metric records as tables. Every command that writes an output
//! artifact also writes `<out>.manifest.json` recording the inputs, the
//! resolved configuration and its hash, tool versions, and result counts.
//!
//! Options may also be supplied through a flat `key = value` configuration
//! file (`--config`); command-line flags take precedence. Exit codes: 0 on
//! success, 1 for usage and validation errors, 2 for data errors surfaced
//! fatally (always for structurally unreadable files, and for recoverable
//! problems under `--strict-data`).

mod manifest;
mod ops;

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

use ops::{Ctx, Format};

#[derive(Parser)]
#[command(
    name = "xce",
    version,
    about = "Cross-corpus evaluation of biomedical entity extraction and normalization",
    propagate_version = true
)]
struct Cli {
    /// Treat recoverable data problems in inputs as fatal (exit code 2)
    #[arg(long, global = true)]
    strict_data: bool,

    /// Flat key-value configuration file; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for per-document parallelism (0 = automatic)
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    jobs: usize,

    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a corpus between PubTator blocks and interchange JSON
    Convert(ConvertArgs),
    /// Rewrite identifiers into target vocabularies via cross-references
    Map(MapArgs),
    /// Score prediction layers against a gold corpus
    Evaluate(EvaluateArgs),
    /// Report which gold mentions each tool recovers, and which only one does
    Overlap(OverlapArgs),
    /// List the most frequent entities of a layer with their surface forms
    Distribution(DistributionArgs),
    /// Count sentences shared between two corpora
    Dedup(DedupArgs),
    /// Detect and normalize mentions with a dictionary linker
    Link(LinkArgs),
    /// Annotate documents via a remote service
    Fetch(FetchArgs),
    /// Render metric records as a table
    Report(ReportArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Input corpus file
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Input format; inferred from the file extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    from: Option<Format>,
    /// Output format; inferred from the output extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    to: Option<Format>,
    /// Annotation layer to carry over [default: gold]
    #[arg(long, value_name = "NAME")]
    layer: Option<String>,
    /// Output corpus file; `<FILE>.manifest.json` is written alongside
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    /// Input corpus file
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Input format; inferred from the file extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    from: Option<Format>,
    /// Output format; inferred from the output extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    to: Option<Format>,
    /// Cross-reference table (source<TAB>target per line); repeatable
    #[arg(long = "xref", value_name = "FILE", required = true)]
    xrefs: Vec<PathBuf>,
    /// Vocabulary file as NAME:TYPE:FILE; repeatable
    #[arg(long = "vocab", value_name = "NAME:TYPE:FILE", required = true)]
    vocabs: Vec<String>,
    /// Target vocabulary names, comma separated [default: every --vocab]
    #[arg(long, value_delimiter = ',', value_name = "NAME")]
    targets: Vec<String>,
    /// Keep only the first image per identifier instead of composites
    #[arg(long)]
    first_image_only: bool,
    /// Layer whose identifiers are rewritten [default: gold]
    #[arg(long, value_name = "NAME")]
    layer: Option<String>,
    /// Output corpus file; `<FILE>.manifest.json` is written alongside
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold corpus file
    #[arg(long, value_name = "FILE")]
    gold: PathBuf,
    /// Input format for all corpora; inferred per file when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    from: Option<Format>,
    /// Prediction layer as NAME:FILE; repeatable
    #[arg(long = "pred", value_name = "NAME:FILE", required = true)]
    preds: Vec<String>,
    /// Entity type to evaluate (chemical, disease, gene, species, ...)
    #[arg(long = "type", value_name = "TYPE")]
    etype: Option<String>,
    /// Match mode: extraction, ner-strict, or ner-lenient [default: extraction]
    #[arg(long, value_name = "MODE")]
    mode: Option<String>,
    /// Evaluation level: mention, document, or macro [default: mention]
    #[arg(long, value_name = "LEVEL")]
    level: Option<String>,
    /// Strict-span boundary slack: one-end or both-ends [default: one-end]
    #[arg(long, value_name = "POLICY")]
    slack: Option<String>,
    /// Also print the layer with the best F1
    #[arg(long)]
    best_of: bool,
    /// Corpus name recorded in the records [default: the gold file stem]
    #[arg(long, value_name = "NAME")]
    corpus: Option<String>,
    /// Record file to write (.tsv or .json); manifest written alongside
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    /// Gold corpus file
    #[arg(long, value_name = "FILE")]
    gold: PathBuf,
    /// Input format for all corpora; inferred per file when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    from: Option<Format>,
    /// Prediction layer as NAME:FILE; repeatable
    #[arg(long = "pred", value_name = "NAME:FILE", required = true)]
    preds: Vec<String>,
    /// Entity type to analyze
    #[arg(long = "type", value_name = "TYPE")]
    etype: Option<String>,
    /// Match mode: extraction, ner-strict, or ner-lenient [default: extraction]
    #[arg(long, value_name = "MODE")]
    mode: Option<String>,
    /// Strict-span boundary slack: one-end or both-ends [default: one-end]
    #[arg(long, value_name = "POLICY")]
    slack: Option<String>,
    /// JSON summary file; manifest written alongside
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistributionArgs {
    /// Input corpus file
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Input format; inferred from the file extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    from: Option<Format>,
    /// Layer to count [default: gold]
    #[arg(long, value_name = "NAME")]
    layer: Option<String>,
    /// Entity type to count
    #[arg(long = "type", value_name = "TYPE")]
    etype: Option<String>,
    /// Number of entities to list [default: 5]
    #[arg(long, value_name = "K")]
    top: Option<usize>,
    /// Count discontiguous mentions as well
    #[arg(long)]
    include_discontiguous: bool,
    /// Output file (.tsv or .json); manifest written alongside
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    /// First corpus file
    #[arg(value_name = "A")]
    a: PathBuf,
    /// Second corpus file
    #[arg(value_name = "B")]
    b: PathBuf,
    /// Input format for both corpora; inferred per file when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    from: Option<Format>,
    /// JSON report file (includes the shared sentences); manifest alongside
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LinkArgs {
    /// Input corpus file
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Input format; inferred from the file extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    from: Option<Format>,
    /// Output format; inferred from the output extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    to: Option<Format>,
    /// Vocabulary file as NAME:TYPE:FILE; repeatable
    #[arg(long = "vocab", value_name = "NAME:TYPE:FILE", required = true)]
    vocabs: Vec<String>,
    /// Similarity threshold below which candidates are dropped [default: 0.7]
    #[arg(long, value_name = "F")]
    tau: Option<f64>,
    /// Longest detection window in tokens [default: 8]
    #[arg(long, value_name = "N")]
    max_tokens: Option<usize>,
    /// Where spans come from: dict (detect) or gold (normalize only)
    /// [default: dict]
    #[arg(long, value_name = "SOURCE")]
    spans: Option<String>,
    /// Name of the layer to write [default: linked]
    #[arg(long, value_name = "NAME")]
    layer_name: Option<String>,
    /// Output corpus file; `<FILE>.manifest.json` is written alongside
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct FetchArgs {
    /// Input corpus file
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Input format; inferred from the file extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    from: Option<Format>,
    /// Output format; inferred from the output extension when omitted
    #[arg(long, value_enum, value_name = "FORMAT")]
    to: Option<Format>,
    /// Service root; requests go to <URL>/annotate
    #[arg(long, value_name = "URL")]
    base: Option<String>,
    /// Maximum requests per second; 0 disables the limiter [default: 3]
    #[arg(long, value_name = "R")]
    rate: Option<f64>,
    /// Additional attempts after the first for retryable failures
    /// [default: 3]
    #[arg(long, value_name = "N")]
    retries: Option<u32>,
    /// Maximum in-flight requests [default: 4]
    #[arg(long, value_name = "N")]
    concurrency: Option<usize>,
    /// Per-request timeout in milliseconds [default: 30000]
    #[arg(long, value_name = "MS")]
    timeout_ms: Option<u64>,
    /// First retry pause in milliseconds; doubles per attempt [default: 250]
    #[arg(long, value_name = "MS")]
    backoff_ms: Option<u64>,
    /// Payload cache directory [default: $XCE_CACHE_DIR, else no cache]
    #[arg(long, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// Name of the layer to write [default: remote]
    #[arg(long, value_name = "NAME")]
    layer_name: Option<String>,
    /// Output corpus file; `<FILE>.manifest.json` is written alongside
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Metric record file (.tsv or .json); repeatable
    #[arg(long = "records", value_name = "FILE", required = true)]
    records: Vec<PathBuf>,
    /// Table spec file (flat key-value: level, metric, delta, format)
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Table format: tsv, markdown, latex, or json [default: tsv]
    #[arg(long, value_name = "FORMAT")]
    format: Option<String>,
    /// Level of the records to tabulate [default: mention]
    #[arg(long, value_name = "LEVEL")]
    level: Option<String>,
    /// Cell metric: f1 or prf [default: f1]
    #[arg(long, value_name = "METRIC")]
    metric: Option<String>,
    /// Add deltas against mention-level baseline records
    #[arg(long)]
    delta: bool,
    /// Rendered table file; manifest written alongside
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };

    let filter = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(filter))
        .format_timestamp(None)
        .init();

    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(ops::exit_code(&err));
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => ops::load_config(path)?,
        None => Default::default(),
    };
    let ctx = Ctx::new(cli.strict_data, cli.jobs, config)?;
    match &cli.command {
        Command::Convert(args) => ops::convert(&ctx, args),
        Command::Map(args) => ops::map(&ctx, args),
        Command::Evaluate(args) => ops::evaluate(&ctx, args),
        Command::Overlap(args) => ops::overlap(&ctx, args),
        Command::Distribution(args) => ops::distribution(&ctx, args),
        Command::Dedup(args) => ops::dedup(&ctx, args),
        Command::Link(args) => ops::link(&ctx, args),
        Command::Fetch(args) => ops::fetch(&ctx, args),
        Command::Report(args) => ops::report(&ctx, args),
    }
}
