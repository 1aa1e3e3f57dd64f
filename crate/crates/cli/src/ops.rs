//! Subcommand implementations: option resolution against the config file,
//! corpus loading, library calls, and output + manifest writing.
//!
//! Measuring commands (`evaluate`, `overlap`, `distribution`, `dedup`,
//! `report`) print their result to stdout and optionally write it to
//! `--out`; transforming commands (`convert`, `map`, `link`, `fetch`)
//! require `--out`. Whenever `--out` is written, a JSON run manifest is
//! written next to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use serde_json::{json, Value};

use xce_core::analysis;
use xce_core::client::{fetch_annotations, FetchConfig};
use xce_core::idmap::{self, MapOptions, VocabSpec, Vocabulary};
use xce_core::ingest::{self, ParseOptions, ParseReport};
use xce_core::linker::{self, SpanSource};
use xce_core::matching::{AlignOptions, MatchMode, Slack};
use xce_core::metrics::{self, percent, Level, MetricRecord, Score};
use xce_core::model::{Corpus, EntityType, LayerSel, Mention};
use xce_core::report::{self, parse_bool, MetricChoice, ReportFormat, ReportSpec};
use xce_core::Error;

use crate::manifest;
use crate::{
    ConvertArgs, DedupArgs, DistributionArgs, EvaluateArgs, FetchArgs, LinkArgs, MapArgs,
    OverlapArgs, ReportArgs,
};

/// Resolved global options shared by every subcommand.
pub struct Ctx {
    pub strict: bool,
    pub jobs: usize,
    config: BTreeMap<String, String>,
}

impl Ctx {
    /// Merges the command-line globals with the config file and applies the
    /// thread-pool setting.
    pub fn new(
        strict_flag: bool,
        jobs_flag: usize,
        config: BTreeMap<String, String>,
    ) -> anyhow::Result<Ctx> {
        let mut ctx = Ctx {
            strict: strict_flag,
            jobs: jobs_flag,
            config,
        };
        ctx.strict = ctx.flag(ctx.strict, "strict-data")?;
        if ctx.jobs == 0 {
            ctx.jobs = ctx.value(None, "jobs")?.unwrap_or(0);
        }
        if ctx.jobs > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(ctx.jobs)
                .build_global();
        }
        Ok(ctx)
    }

    /// The command-line value if present, else the config-file value.
    fn value<T>(&self, cli: Option<T>, key: &str) -> anyhow::Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.config.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key {key}: invalid value {raw:?}: {e}")),
        }
    }

    /// A boolean switch: set on the command line, or truthy in the config.
    fn flag(&self, cli: bool, key: &str) -> anyhow::Result<bool> {
        if cli {
            return Ok(true);
        }
        match self.config.get(key) {
            None => Ok(false),
            Some(raw) => parse_bool(raw)
                .ok_or_else(|| anyhow!("config key {key}: expected a boolean, found {raw:?}")),
        }
    }

    fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            strict: self.strict,
            ..ParseOptions::default()
        }
    }
}

/// Reads and parses the flat key-value config file.
pub fn load_config(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let content = fs::read_to_string(path)
        .map_err(|e| anyhow!("config file {}: {e}", path.display()))?;
    report::parse_flat_kv(&content).map_err(|e| anyhow!("config file {}: {e}", path.display()))
}

/// Maps an error chain to the process exit code: data errors (malformed
/// input surfaced fatally) exit with 2, everything else with 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<Error>() {
            return match core {
                Error::Parse { .. }
                | Error::Schema { .. }
                | Error::MalformedIdentifier(_)
                | Error::InvalidSpan { .. }
                | Error::SpanOutOfBounds { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

/// Serialized corpus format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    /// PubTator title/abstract blocks with tab-separated annotations.
    Pubtator,
    /// Newline-delimited interchange JSON.
    Json,
}

impl Format {
    fn infer(path: &Path) -> Option<Format> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pubtator" | "pub" | "txt" => Some(Format::Pubtator),
            "json" | "ndjson" | "jsonl" => Some(Format::Json),
            _ => None,
        }
    }

    /// The explicit format if given, else the one inferred from `path`.
    fn of(explicit: Option<Format>, path: &Path) -> anyhow::Result<Format> {
        explicit.or_else(|| Format::infer(path)).ok_or_else(|| {
            anyhow!(
                "cannot infer the format of {} from its extension; pass --from/--to",
                path.display()
            )
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Format::Pubtator => "pubtator",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Format, String> {
        match s.to_ascii_lowercase().as_str() {
            "pubtator" => Ok(Format::Pubtator),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (expected pubtator or json)")),
        }
    }
}

fn read_input(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path)
        .map_err(|e| anyhow::Error::from(Error::io(path.display().to_string(), e)))
}

fn write_output(path: &Path, content: &str) -> anyhow::Result<()> {
    fs::write(path, content)
        .map_err(|e| anyhow::Error::from(Error::io(path.display().to_string(), e)))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string()
}

fn is_json(path: &Path) -> bool {
    matches!(Format::infer(path), Some(Format::Json))
}

fn log_parse_report(path: &Path, report: &ParseReport) {
    const SHOWN: usize = 20;
    for w in report.warnings.iter().take(SHOWN) {
        log::warn!("{}: doc {}: {}", path.display(), w.doc_id, w.message);
    }
    let extra = report.warnings.len().saturating_sub(SHOWN) + report.warnings_suppressed;
    if extra > 0 {
        log::warn!("{}: {extra} further warnings suppressed", path.display());
    }
}

fn load_corpus(
    ctx: &Ctx,
    path: &Path,
    fmt: Format,
    layer: &LayerSel,
) -> anyhow::Result<(Corpus, ParseReport)> {
    let content = read_input(path)?;
    let opts = ctx.parse_options();
    let (mut corpus, report) = match fmt {
        Format::Pubtator => ingest::parse_pubtator(&content, layer, &opts),
        Format::Json => ingest::parse_interchange_json(&content, layer, &opts),
    }
    .with_context(|| format!("parsing {}", path.display()))?;
    corpus.name = file_stem(path);
    log_parse_report(path, &report);
    Ok((corpus, report))
}

fn serialize_corpus(corpus: &Corpus, fmt: Format, layer: &LayerSel) -> anyhow::Result<String> {
    Ok(match fmt {
        Format::Pubtator => ingest::serialize_pubtator(corpus, layer)?,
        Format::Json => ingest::serialize_interchange_json(corpus, layer)?,
    })
}

fn resolve_layer(
    ctx: &Ctx,
    cli: &Option<String>,
    key: &str,
    default: &str,
) -> anyhow::Result<LayerSel> {
    let name = ctx
        .value(cli.clone(), key)?
        .unwrap_or_else(|| default.to_string());
    Ok(LayerSel::parse(&name))
}

fn resolve_etype(ctx: &Ctx, cli: &Option<String>) -> anyhow::Result<EntityType> {
    let raw = ctx.value(cli.clone(), "type")?.ok_or_else(|| {
        anyhow!("--type is required (on the command line or as `type` in the config file)")
    })?;
    Ok(EntityType::parse(&raw))
}

fn resolve_mode(ctx: &Ctx, cli: &Option<String>) -> anyhow::Result<MatchMode> {
    let raw = ctx
        .value(cli.clone(), "mode")?
        .unwrap_or_else(|| "extraction".to_string());
    MatchMode::parse(&raw).ok_or_else(|| {
        anyhow!("unknown mode {raw:?} (expected extraction, ner-strict, or ner-lenient)")
    })
}

fn resolve_level(ctx: &Ctx, cli: &Option<String>) -> anyhow::Result<Level> {
    let raw = ctx
        .value(cli.clone(), "level")?
        .unwrap_or_else(|| "mention".to_string());
    Level::parse(&raw)
        .ok_or_else(|| anyhow!("unknown level {raw:?} (expected mention, document, or macro)"))
}

fn resolve_slack(ctx: &Ctx, cli: &Option<String>) -> anyhow::Result<AlignOptions> {
    let raw = ctx
        .value(cli.clone(), "slack")?
        .unwrap_or_else(|| "one-end".to_string());
    let slack = match raw.to_ascii_lowercase().as_str() {
        "one-end" => Slack::OneEnd,
        "both-ends" => Slack::BothEnds,
        _ => bail!("unknown slack policy {raw:?} (expected one-end or both-ends)"),
    };
    Ok(AlignOptions { slack })
}

fn slack_name(opts: &AlignOptions) -> &'static str {
    match opts.slack {
        Slack::OneEnd => "one-end",
        Slack::BothEnds => "both-ends",
    }
}

/// Splits `NAME:FILE` prediction specs, rejecting duplicates and the
/// reserved gold layer.
fn parse_pred_specs(raws: &[String]) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut specs = Vec::new();
    let mut seen = BTreeSet::new();
    for raw in raws {
        let (name, path) = raw
            .split_once(':')
            .filter(|(n, p)| !n.is_empty() && !p.is_empty())
            .ok_or_else(|| anyhow!("invalid --pred {raw:?}: expected NAME:FILE"))?;
        if matches!(LayerSel::parse(name), LayerSel::Gold) {
            bail!("a prediction layer may not be named {name:?}");
        }
        if !seen.insert(name.to_string()) {
            bail!("duplicate prediction layer name {name:?}");
        }
        specs.push((name.to_string(), PathBuf::from(path)));
    }
    Ok(specs)
}

/// Splits `NAME:TYPE:FILE` vocabulary specs.
fn parse_vocab_specs(raws: &[String]) -> anyhow::Result<Vec<VocabSpec>> {
    let mut specs = Vec::new();
    let mut seen = BTreeSet::new();
    for raw in raws {
        let mut parts = raw.splitn(3, ':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(name), Some(etype), Some(path))
                if !name.is_empty() && !etype.is_empty() && !path.is_empty() =>
            {
                if !seen.insert(name.to_string()) {
                    bail!("duplicate vocabulary name {name:?}");
                }
                specs.push(VocabSpec {
                    name: name.to_string(),
                    etype: EntityType::parse(etype),
                    path: PathBuf::from(path),
                });
            }
            _ => bail!("invalid --vocab {raw:?}: expected NAME:TYPE:FILE"),
        }
    }
    Ok(specs)
}

/// Loads the gold corpus and grafts each prediction file onto it as a tool
/// layer, matching documents by id. Every gold document ends up with every
/// layer (empty when the tool produced nothing); predictions for unknown
/// documents are a warning, or fatal under `--strict-data`.
fn load_eval_corpus(
    ctx: &Ctx,
    gold_path: &Path,
    from: Option<Format>,
    pred_raws: &[String],
) -> anyhow::Result<(Corpus, Vec<String>, Vec<String>)> {
    let specs = parse_pred_specs(pred_raws)?;
    let gold_fmt = Format::of(from, gold_path)?;
    let (mut corpus, _) = load_corpus(ctx, gold_path, gold_fmt, &LayerSel::Gold)?;
    let mut inputs = vec![gold_path.display().to_string()];
    for (name, path) in &specs {
        inputs.push(path.display().to_string());
        let fmt = Format::of(from, path)?;
        let sel = LayerSel::Tool(name.clone());
        let (pred_corpus, _) = load_corpus(ctx, path, fmt, &sel)?;
        let mut by_id: BTreeMap<String, Vec<Mention>> = BTreeMap::new();
        for mut doc in pred_corpus.documents {
            let mentions = doc.layers.remove(name.as_str()).unwrap_or_default();
            by_id.insert(doc.doc_id, mentions);
        }
        for doc in &mut corpus.documents {
            *doc.layer_mut(&sel) = by_id.remove(&doc.doc_id).unwrap_or_default();
        }
        if !by_id.is_empty() {
            let strays: Vec<&str> = by_id.keys().take(3).map(String::as_str).collect();
            let message = format!(
                "{} document(s) not present in the gold corpus (e.g. {})",
                by_id.len(),
                strays.join(", ")
            );
            if ctx.strict {
                return Err(Error::Parse {
                    location: path.display().to_string(),
                    message,
                }
                .into());
            }
            log::warn!("{}: {message}", path.display());
        }
    }
    for doc in &mut corpus.documents {
        doc.sort_layers();
    }
    let names = specs.into_iter().map(|(name, _)| name).collect();
    Ok((corpus, names, inputs))
}

fn config_map<const N: usize>(ctx: &Ctx, entries: [(&str, String); N]) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert("strict-data".to_string(), ctx.strict.to_string());
    map.insert("jobs".to_string(), ctx.jobs.to_string());
    for (key, value) in entries {
        map.insert(key.to_string(), value);
    }
    map
}

fn counts_map<const N: usize>(entries: [(&str, Value); N]) -> BTreeMap<String, Value> {
    entries
        .into_iter()
        .map(|(key, value)| (key.to_string(), value))
        .collect()
}

pub fn convert(ctx: &Ctx, args: &ConvertArgs) -> anyhow::Result<()> {
    let from = Format::of(ctx.value(args.from, "from")?, &args.input)?;
    let to = Format::of(ctx.value(args.to, "to")?, &args.out)?;
    let layer = resolve_layer(ctx, &args.layer, "layer", "gold")?;
    let (corpus, report) = load_corpus(ctx, &args.input, from, &layer)?;
    let rendered = serialize_corpus(&corpus, to, &layer)?;
    write_output(&args.out, &rendered)?;
    let config = config_map(
        ctx,
        [
            ("from", from.name().to_string()),
            ("to", to.name().to_string()),
            ("layer", layer.to_string()),
        ],
    );
    let counts = counts_map([
        ("documents", json!(report.documents)),
        ("annotations", json!(report.annotations)),
        (
            "warnings",
            json!(report.warnings.len() + report.warnings_suppressed),
        ),
        ("dropped_unparseable", json!(report.dropped_unparseable)),
        ("discontiguous", json!(report.dropped_discontiguous)),
    ]);
    let inputs = vec![args.input.display().to_string()];
    manifest::write(&args.out, "convert", &inputs, &config, &counts)?;
    log::info!(
        "converted {} documents to {}",
        report.documents,
        args.out.display()
    );
    Ok(())
}

pub fn map(ctx: &Ctx, args: &MapArgs) -> anyhow::Result<()> {
    let from = Format::of(ctx.value(args.from, "from")?, &args.input)?;
    let to = Format::of(ctx.value(args.to, "to")?, &args.out)?;
    let layer = resolve_layer(ctx, &args.layer, "layer", "gold")?;
    let first_image_only = ctx.flag(args.first_image_only, "first-image-only")?;
    let vocabs = parse_vocab_specs(&args.vocabs)?;
    let targets: Vec<String> = if args.targets.is_empty() {
        vocabs.iter().map(|v| v.name.clone()).collect()
    } else {
        args.targets.clone()
    };
    let (corpus, _) = load_corpus(ctx, &args.input, from, &layer)?;
    let (table, load_report) = idmap::load_mapping(&args.xrefs, &vocabs)?;
    let opts = MapOptions { first_image_only };
    let (mapped, map_report) = idmap::map_layer(&corpus, &layer, &table, &targets, &opts)?;
    let rendered = serialize_corpus(&mapped, to, &layer)?;
    write_output(&args.out, &rendered)?;
    let config = config_map(
        ctx,
        [
            ("from", from.name().to_string()),
            ("to", to.name().to_string()),
            ("layer", layer.to_string()),
            ("targets", targets.join(",")),
            ("first-image-only", first_image_only.to_string()),
        ],
    );
    let counts = counts_map([
        ("documents", json!(mapped.documents.len())),
        ("xref_rows", json!(load_report.xref_rows)),
        ("vocab_entries", json!(load_report.vocab_entries)),
        ("input_mentions", json!(map_report.input_mentions)),
        ("output_mentions", json!(map_report.output_mentions)),
        ("dropped_unmapped", json!(map_report.dropped_unmapped)),
        ("ambiguous", json!(map_report.ambiguous)),
        ("duplicated_extra", json!(map_report.duplicated_extra)),
    ]);
    let mut inputs = vec![args.input.display().to_string()];
    inputs.extend(args.xrefs.iter().map(|p| p.display().to_string()));
    inputs.extend(vocabs.iter().map(|v| v.path.display().to_string()));
    manifest::write(&args.out, "map", &inputs, &config, &counts)?;
    log::info!(
        "mapped {} -> {} mentions ({} dropped, {} ambiguous)",
        map_report.input_mentions,
        map_report.output_mentions,
        map_report.dropped_unmapped,
        map_report.ambiguous
    );
    Ok(())
}

pub fn evaluate(ctx: &Ctx, args: &EvaluateArgs) -> anyhow::Result<()> {
    let from = ctx.value(args.from, "from")?;
    let (mut corpus, names, inputs) = load_eval_corpus(ctx, &args.gold, from, &args.preds)?;
    let etype = resolve_etype(ctx, &args.etype)?;
    let mode = resolve_mode(ctx, &args.mode)?;
    let level = resolve_level(ctx, &args.level)?;
    let align = resolve_slack(ctx, &args.slack)?;
    let best_of = ctx.flag(args.best_of, "best-of")?;
    if let Some(name) = ctx.value(args.corpus.clone(), "corpus")? {
        corpus.name = name;
    }

    let mut records = Vec::new();
    let mut scores: BTreeMap<String, Score> = BTreeMap::new();
    for name in &names {
        let (score, tally) = match level {
            Level::Mention => {
                let m = metrics::micro_mention(&corpus, name, &etype, mode, &align)?;
                (m.score, m.tally)
            }
            Level::Document => {
                let m = metrics::document_level(&corpus, name, &etype)?;
                (m.score, m.tally)
            }
            Level::Macro => {
                let m = metrics::macro_entity(&corpus, name, &etype, mode, &align)?;
                (m.score, m.pooled)
            }
        };
        records.push(MetricRecord::new(
            &corpus.name,
            name,
            &etype,
            mode,
            level,
            score,
            tally,
        ));
        scores.insert(name.clone(), score);
    }

    let tsv = metrics::records_to_tsv(&records);
    print!("{tsv}");
    let best = metrics::select_best(&scores);
    if best_of {
        if let Some((name, score)) = best {
            println!("best\t{name}\t{:.2}", percent(score.f1));
        }
    }

    if let Some(out) = &args.out {
        let rendered = if is_json(out) {
            serde_json::to_string_pretty(&records)? + "\n"
        } else {
            tsv
        };
        write_output(out, &rendered)?;
        let config = config_map(
            ctx,
            [
                ("type", etype.name().to_string()),
                ("mode", mode.name().to_string()),
                ("level", level.name().to_string()),
                ("slack", slack_name(&align).to_string()),
                ("best-of", best_of.to_string()),
                ("corpus", corpus.name.clone()),
            ],
        );
        let counts = counts_map([
            ("documents", json!(corpus.documents.len())),
            ("layers", json!(names.len())),
            ("records", json!(records.len())),
            ("best", json!(best.map(|(name, _)| name))),
        ]);
        manifest::write(out, "evaluate", &inputs, &config, &counts)?;
    }
    Ok(())
}

pub fn overlap(ctx: &Ctx, args: &OverlapArgs) -> anyhow::Result<()> {
    let from = ctx.value(args.from, "from")?;
    let (corpus, names, inputs) = load_eval_corpus(ctx, &args.gold, from, &args.preds)?;
    let etype = resolve_etype(ctx, &args.etype)?;
    let mode = resolve_mode(ctx, &args.mode)?;
    let align = resolve_slack(ctx, &args.slack)?;
    let summary = analysis::overlap(&corpus, &names, &etype, mode, &align)?;

    println!("universe\t{}", summary.universe);
    println!(
        "all_tools\t{}\t{:.2}",
        summary.all_tools,
        percent(summary.all_tools_fraction)
    );
    for (cardinality, count) in &summary.by_cardinality {
        println!("agreement\t{cardinality}\t{count}");
    }
    for name in &summary.tools {
        println!(
            "exclusive\t{name}\t{}\t{:.2}",
            summary.exclusive[name],
            percent(summary.exclusive_fraction[name])
        );
    }

    if let Some(out) = &args.out {
        let rendered = serde_json::to_string_pretty(&summary)? + "\n";
        write_output(out, &rendered)?;
        let config = config_map(
            ctx,
            [
                ("type", etype.name().to_string()),
                ("mode", mode.name().to_string()),
                ("slack", slack_name(&align).to_string()),
            ],
        );
        let counts = counts_map([
            ("tools", json!(summary.tools.len())),
            ("universe", json!(summary.universe)),
            ("all_tools", json!(summary.all_tools)),
        ]);
        manifest::write(out, "overlap", &inputs, &config, &counts)?;
    }
    Ok(())
}

fn distribution_tsv(dist: &analysis::Distribution) -> String {
    let mut out = String::from("id\tcount\tshare\tsurface\tsurface_count\tsurface_share\n");
    for row in &dist.rows {
        let head = format!(
            "{}\t{}\t{:.2}",
            row.id,
            row.count,
            analysis::share_percent(row.share)
        );
        if row.surfaces.is_empty() {
            out.push_str(&format!("{head}\t\t\t\n"));
            continue;
        }
        for surface in &row.surfaces {
            out.push_str(&format!(
                "{head}\t{}\t{}\t{:.2}\n",
                surface.surface,
                surface.count,
                analysis::share_percent(surface.share)
            ));
        }
    }
    out
}

pub fn distribution(ctx: &Ctx, args: &DistributionArgs) -> anyhow::Result<()> {
    let from = Format::of(ctx.value(args.from, "from")?, &args.input)?;
    let layer = resolve_layer(ctx, &args.layer, "layer", "gold")?;
    let etype = resolve_etype(ctx, &args.etype)?;
    let top = ctx.value(args.top, "top")?.unwrap_or(5);
    let include = ctx.flag(args.include_discontiguous, "include-discontiguous")?;
    let (corpus, _) = load_corpus(ctx, &args.input, from, &layer)?;
    let dist = analysis::distribution(&corpus, &layer, &etype, top, include)?;

    let tsv = distribution_tsv(&dist);
    print!("{tsv}");

    if let Some(out) = &args.out {
        let rendered = if is_json(out) {
            serde_json::to_string_pretty(&dist)? + "\n"
        } else {
            tsv
        };
        write_output(out, &rendered)?;
        let config = config_map(
            ctx,
            [
                ("type", etype.name().to_string()),
                ("layer", layer.to_string()),
                ("top", top.to_string()),
                ("include-discontiguous", include.to_string()),
            ],
        );
        let counts = counts_map([
            ("total_mentions", json!(dist.total_mentions)),
            ("unique_entities", json!(dist.unique_entities)),
            ("rows", json!(dist.rows.len())),
        ]);
        let inputs = vec![args.input.display().to_string()];
        manifest::write(out, "distribution", &inputs, &config, &counts)?;
    }
    Ok(())
}

pub fn dedup(ctx: &Ctx, args: &DedupArgs) -> anyhow::Result<()> {
    let fmt_a = Format::of(ctx.value(args.from, "from")?, &args.a)?;
    let fmt_b = Format::of(ctx.value(args.from, "from")?, &args.b)?;
    let (corpus_a, _) = load_corpus(ctx, &args.a, fmt_a, &LayerSel::Gold)?;
    let (corpus_b, _) = load_corpus(ctx, &args.b, fmt_b, &LayerSel::Gold)?;
    let overlap = analysis::sentence_overlap(&corpus_a, &corpus_b);

    println!("sentences_a\t{}", overlap.total_a);
    println!("sentences_b\t{}", overlap.total_b);
    println!("shared\t{}", overlap.shared);

    if let Some(out) = &args.out {
        let rendered = serde_json::to_string_pretty(&overlap)? + "\n";
        write_output(out, &rendered)?;
        let config = config_map(ctx, []);
        let counts = counts_map([
            ("sentences_a", json!(overlap.total_a)),
            ("sentences_b", json!(overlap.total_b)),
            ("shared", json!(overlap.shared)),
        ]);
        let inputs = vec![args.a.display().to_string(), args.b.display().to_string()];
        manifest::write(out, "dedup", &inputs, &config, &counts)?;
    }
    Ok(())
}

pub fn link(ctx: &Ctx, args: &LinkArgs) -> anyhow::Result<()> {
    let from = Format::of(ctx.value(args.from, "from")?, &args.input)?;
    let to = Format::of(ctx.value(args.to, "to")?, &args.out)?;
    let vocab_specs = parse_vocab_specs(&args.vocabs)?;
    let tau = ctx.value(args.tau, "tau")?.unwrap_or(linker::DEFAULT_TAU);
    if !(0.0..=1.0).contains(&tau) {
        bail!("--tau must lie in [0, 1], got {tau}");
    }
    let max_tokens = ctx
        .value(args.max_tokens, "max-tokens")?
        .unwrap_or(linker::DEFAULT_MAX_TOKENS);
    let layer_name = ctx
        .value(args.layer_name.clone(), "layer-name")?
        .unwrap_or_else(|| "linked".to_string());
    if matches!(LayerSel::parse(&layer_name), LayerSel::Gold) {
        bail!("the output layer may not be named {layer_name:?}");
    }
    let spans = ctx
        .value(args.spans.clone(), "spans")?
        .unwrap_or_else(|| "dict".to_string());
    let source = match spans.to_ascii_lowercase().as_str() {
        "dict" | "dictionary" => SpanSource::Dictionary,
        "gold" => SpanSource::Gold,
        _ => bail!("unknown span source {spans:?} (expected dict or gold)"),
    };

    let (corpus, _) = load_corpus(ctx, &args.input, from, &LayerSel::Gold)?;
    let (table, load_report) = idmap::load_mapping(&[], &vocab_specs)?;
    let vocabularies: Vec<Vocabulary> = table.vocabularies().cloned().collect();
    let index = linker::build_index(&vocabularies);
    if index.is_empty() {
        bail!("the alias index is empty; check the vocabulary files");
    }
    let (linked, link_report) =
        linker::link_corpus(&corpus, &index, &layer_name, source, tau, max_tokens)?;
    let rendered = serialize_corpus(&linked, to, &LayerSel::Tool(layer_name.clone()))?;
    write_output(&args.out, &rendered)?;

    let config = config_map(
        ctx,
        [
            ("from", from.name().to_string()),
            ("to", to.name().to_string()),
            ("tau", tau.to_string()),
            ("max-tokens", max_tokens.to_string()),
            ("spans", spans.clone()),
            ("layer-name", layer_name.clone()),
        ],
    );
    let counts = counts_map([
        ("documents", json!(linked.documents.len())),
        ("vocab_entries", json!(load_report.vocab_entries)),
        ("aliases", json!(index.len())),
        ("detected", json!(link_report.detected)),
        ("linked", json!(link_report.linked)),
        ("dropped_unlinked", json!(link_report.dropped_unlinked)),
    ]);
    let mut inputs = vec![args.input.display().to_string()];
    inputs.extend(vocab_specs.iter().map(|v| v.path.display().to_string()));
    manifest::write(&args.out, "link", &inputs, &config, &counts)?;
    log::info!(
        "linked {} of {} candidates into layer {layer_name}",
        link_report.linked,
        link_report.detected
    );
    Ok(())
}

pub fn fetch(ctx: &Ctx, args: &FetchArgs) -> anyhow::Result<()> {
    let from = Format::of(ctx.value(args.from, "from")?, &args.input)?;
    let to = Format::of(ctx.value(args.to, "to")?, &args.out)?;
    let base = ctx
        .value(args.base.clone(), "base")?
        .ok_or_else(|| anyhow!("--base URL is required"))?;
    let layer_name = ctx
        .value(args.layer_name.clone(), "layer-name")?
        .unwrap_or_else(|| "remote".to_string());
    let config = FetchConfig {
        base_url: base.clone(),
        rate_per_sec: ctx.value(args.rate, "rate")?.unwrap_or(3.0),
        concurrency: ctx.value(args.concurrency, "concurrency")?.unwrap_or(4),
        retries: ctx.value(args.retries, "retries")?.unwrap_or(3),
        timeout_ms: ctx.value(args.timeout_ms, "timeout-ms")?.unwrap_or(30_000),
        backoff_base_ms: ctx.value(args.backoff_ms, "backoff-ms")?.unwrap_or(250),
        cache_dir: ctx.value(args.cache_dir.clone(), "cache-dir")?,
    };

    let (mut corpus, _) = load_corpus(ctx, &args.input, from, &LayerSel::Gold)?;
    let report = fetch_annotations(&mut corpus, &layer_name, &config)?;
    for failure in &report.failed {
        log::warn!(
            "annotation failed for document {}: {}",
            failure.doc_id,
            failure.reason
        );
    }
    for warning in &report.warnings {
        log::warn!("{warning}");
    }
    let rendered = serialize_corpus(&corpus, to, &LayerSel::Tool(layer_name.clone()))?;
    write_output(&args.out, &rendered)?;

    let mut config_kv = config_map(
        ctx,
        [
            ("from", from.name().to_string()),
            ("to", to.name().to_string()),
            ("base", base),
            ("rate", config.rate_per_sec.to_string()),
            ("concurrency", config.concurrency.to_string()),
            ("retries", config.retries.to_string()),
            ("timeout-ms", config.timeout_ms.to_string()),
            ("backoff-ms", config.backoff_base_ms.to_string()),
            ("layer-name", layer_name.clone()),
        ],
    );
    if let Some(dir) = &config.cache_dir {
        config_kv.insert("cache-dir".to_string(), dir.display().to_string());
    }
    let counts = counts_map([
        ("requested", json!(report.requested)),
        ("fetched", json!(report.fetched)),
        ("cache_hits", json!(report.cache_hits)),
        ("retries", json!(report.retries)),
        ("failed", json!(report.failed.len())),
    ]);
    let inputs = vec![args.input.display().to_string()];
    manifest::write(&args.out, "fetch", &inputs, &config_kv, &counts)?;
    log::info!(
        "annotated {} documents ({} from cache, {} failed)",
        report.fetched + report.cache_hits,
        report.cache_hits,
        report.failed.len()
    );
    Ok(())
}

fn metric_name(metric: MetricChoice) -> &'static str {
    match metric {
        MetricChoice::F1 => "f1",
        MetricChoice::Prf => "prf",
    }
}

pub fn report(ctx: &Ctx, args: &ReportArgs) -> anyhow::Result<()> {
    let mut spec = match ctx.value(args.spec.clone(), "spec")? {
        Some(path) => {
            let content = read_input(&path)?;
            ReportSpec::from_flat_kv(&content)
                .map_err(|e| anyhow!("report spec {}: {e}", path.display()))?
        }
        None => ReportSpec::default(),
    };
    if let Some(raw) = ctx.value(args.level.clone(), "level")? {
        spec.level = Level::parse(&raw)
            .ok_or_else(|| anyhow!("unknown level {raw:?} (expected mention, document, or macro)"))?;
    }
    if let Some(raw) = ctx.value(args.metric.clone(), "metric")? {
        spec.metric = MetricChoice::parse(&raw)
            .ok_or_else(|| anyhow!("unknown metric {raw:?} (expected f1 or prf)"))?;
    }
    if ctx.flag(args.delta, "delta")? {
        spec.delta = true;
    }
    if let Some(raw) = ctx.value(args.format.clone(), "format")? {
        spec.format = ReportFormat::parse(&raw).ok_or_else(|| {
            anyhow!("unknown format {raw:?} (expected tsv, markdown, latex, or json)")
        })?;
    }

    let mut records = Vec::new();
    let mut inputs = Vec::new();
    for path in &args.records {
        inputs.push(path.display().to_string());
        let content = read_input(path)?;
        let batch: Vec<MetricRecord> = if is_json(path) {
            serde_json::from_str(&content).map_err(|e| {
                anyhow::Error::from(Error::Parse {
                    location: path.display().to_string(),
                    message: e.to_string(),
                })
            })?
        } else {
            metrics::records_from_tsv(&content)
                .with_context(|| format!("reading {}", path.display()))?
        };
        records.extend(batch);
    }

    let model = report::build_table(&records, &spec)?;
    let rendered = report::render_table(&model, &spec);
    print!("{rendered}");

    if let Some(out) = &args.out {
        write_output(out, &rendered)?;
        let mut config = config_map(
            ctx,
            [
                ("level", spec.level.name().to_string()),
                ("metric", metric_name(spec.metric).to_string()),
                ("delta", spec.delta.to_string()),
                ("format", spec.format.name().to_string()),
            ],
        );
        if let Some(path) = &args.spec {
            config.insert("spec".to_string(), path.display().to_string());
        }
        let counts = counts_map([
            ("records", json!(records.len())),
            ("rows", json!(model.rows.len())),
            ("columns", json!(model.columns.len())),
            ("unplaced", json!(model.unplaced.len())),
        ]);
        manifest::write(out, "report", &inputs, &config, &counts)?;
    }
    Ok(())
}
