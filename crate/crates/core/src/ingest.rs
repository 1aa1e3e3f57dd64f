//! Corpus readers and writers.
//!
//! Two formats are supported:
//!
//! * **PubTator blocks** — `doc|t|title`, an optional `doc|a|abstract`, and
//!   one tab-separated annotation line per mention, blocks separated by a
//!   blank line. The document text is the title and abstract joined by a
//!   single space.
//! * **Interchange JSON** — newline-delimited JSON, one document per line,
//!   with explicit passages and entities (possibly discontiguous, possibly
//!   normalized to multiple knowledge bases).
//!
//! Parsing is lenient by default: malformed annotations are dropped and
//! recorded in the [`ParseReport`]; [`ParseOptions::strict`] upgrades every
//! data problem to a fatal error. Schema violations in JSON input (missing
//! fields, wrong types) are always fatal with a path to the offending
//! element.

use std::collections::BTreeSet;

use serde::Serialize;
use serde_json::Value;

use crate::model::{
    split_composite_ids, CharText, Corpus, Document, EntityId, EntityType, LayerSel, Mention,
    Passage, Span,
};
use crate::{Error, Result};

/// Parser configuration.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Upgrade recoverable data problems (bad offsets, surface mismatches,
    /// malformed annotation lines) to fatal errors.
    pub strict: bool,
    /// Maximum number of warnings retained in the report; further warnings
    /// are counted but not stored.
    pub warning_cap: usize,
}

impl Default for ParseOptions {
    fn default() -> ParseOptions {
        ParseOptions {
            strict: false,
            warning_cap: 10_000,
        }
    }
}

/// One recoverable problem encountered while parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub doc_id: String,
    pub message: String,
}

/// Statistics and problems from one parse run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParseReport {
    /// Documents successfully loaded.
    pub documents: usize,
    /// Annotations successfully loaded (including discontiguous ones).
    pub annotations: usize,
    /// Recoverable problems, capped at [`ParseOptions::warning_cap`].
    pub warnings: Vec<Warning>,
    /// Warnings dropped once the cap was reached.
    pub warnings_suppressed: usize,
    /// Annotations flagged as discontiguous. They are loaded, but
    /// [`filter_eligible`] removes them before evaluation.
    pub dropped_discontiguous: usize,
    /// Annotation lines or entities dropped as unparseable.
    pub dropped_unparseable: usize,
}

impl ParseReport {
    fn warn(&mut self, cap: usize, doc_id: &str, message: String) {
        if self.warnings.len() < cap {
            self.warnings.push(Warning {
                doc_id: doc_id.to_string(),
                message,
            });
        } else {
            self.warnings_suppressed += 1;
        }
    }
}

fn parse_error(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

/// Parses PubTator blocks into a corpus, loading annotations into `layer`.
pub fn parse_pubtator(
    input: &str,
    layer: &LayerSel,
    opts: &ParseOptions,
) -> Result<(Corpus, ParseReport)> {
    let mut corpus = Corpus::new("");
    let mut report = ParseReport::default();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();

    // Group non-blank lines into blocks. Blocks are separated by one blank
    // line; extra blank lines are tolerated on input.
    let mut blocks: Vec<Vec<(usize, &str)>> = Vec::new();
    let mut current: Vec<(usize, &str)> = Vec::new();
    for (index, raw) in input.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push((index + 1, line));
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    for block in blocks {
        let (header_line, header) = block[0];
        let location = format!("line {header_line}");
        let (doc_id, title) = match split_passage_line(header, "t") {
            Some(parts) => parts,
            None => {
                if opts.strict {
                    return Err(parse_error(
                        location,
                        format!("expected '<doc_id>|t|<title>' block header, found {header:?}"),
                    ));
                }
                report.warn(
                    opts.warning_cap,
                    "",
                    format!("line {header_line}: unparseable block header; block skipped"),
                );
                report.dropped_unparseable += 1;
                continue;
            }
        };
        if seen_ids.contains(doc_id) {
            if opts.strict {
                return Err(parse_error(
                    location,
                    format!("duplicate document id {doc_id:?}"),
                ));
            }
            report.warn(
                opts.warning_cap,
                doc_id,
                format!("line {header_line}: duplicate document id; block skipped"),
            );
            report.dropped_unparseable += 1;
            continue;
        }

        let mut annotation_lines = &block[1..];
        let mut abstract_text: Option<&str> = None;
        if let Some(&(_, second)) = block.get(1) {
            if let Some((abs_id, abs)) = split_passage_line(second, "a") {
                if abs_id == doc_id {
                    abstract_text = Some(abs);
                    annotation_lines = &block[2..];
                }
            }
        }

        let text = match abstract_text {
            Some(abs) => format!("{title} {abs}"),
            None => title.to_string(),
        };
        let title_len = title.chars().count();
        let mut doc = Document::new(doc_id, text);
        doc.passages.push(Passage {
            kind: "title".to_string(),
            offset: 0,
            length: title_len,
        });
        if let Some(abs) = abstract_text {
            doc.passages.push(Passage {
                kind: "abstract".to_string(),
                offset: title_len + 1,
                length: abs.chars().count(),
            });
        }
        let chars = CharText::new(&doc.text);

        for &(line_no, line) in annotation_lines {
            match parse_annotation_line(line, doc_id, &chars, opts, &mut report, line_no)? {
                Some(mention) => {
                    doc.layer_mut(layer).push(mention);
                    report.annotations += 1;
                }
                None => report.dropped_unparseable += 1,
            }
        }
        doc.sort_layers();
        seen_ids.insert(doc_id.to_string());
        corpus.documents.push(doc);
        report.documents += 1;
    }
    Ok((corpus, report))
}

/// Splits `<doc_id>|<tag>|<text>` and returns `(doc_id, text)` when the tag
/// matches and the id is non-empty. Text may itself contain `|`.
fn split_passage_line<'a>(line: &'a str, tag: &str) -> Option<(&'a str, &'a str)> {
    let mut parts = line.splitn(3, '|');
    let doc_id = parts.next()?;
    let found_tag = parts.next()?;
    let text = parts.next()?;
    if found_tag == tag && !doc_id.is_empty() {
        Some((doc_id, text))
    } else {
        None
    }
}

/// Parses one tab-separated annotation line. Returns `Ok(None)` when the
/// line was dropped in lenient mode (the caller counts it).
fn parse_annotation_line(
    line: &str,
    doc_id: &str,
    chars: &CharText,
    opts: &ParseOptions,
    report: &mut ParseReport,
    line_no: usize,
) -> Result<Option<Mention>> {
    let location = format!("line {line_no}");
    let mut fail = |message: String| -> Result<Option<Mention>> {
        if opts.strict {
            Err(parse_error(location.clone(), message))
        } else {
            report.warn(opts.warning_cap, doc_id, format!("line {line_no}: {message}"));
            Ok(None)
        }
    };

    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return fail(format!(
            "expected 6 tab-separated fields (doc_id, start, end, surface, type, id), found {}",
            fields.len()
        ));
    }
    if fields[0] != doc_id {
        return fail(format!(
            "annotation document id {:?} does not match block id {doc_id:?}",
            fields[0]
        ));
    }
    let start = match fields[1].parse::<usize>() {
        Ok(v) => v,
        Err(_) => return fail(format!("non-numeric start offset {:?}", fields[1])),
    };
    let end = match fields[2].parse::<usize>() {
        Ok(v) => v,
        Err(_) => return fail(format!("non-numeric end offset {:?}", fields[2])),
    };
    let span = match Span::new(start, end) {
        Ok(span) => span,
        Err(err) => return fail(err.to_string()),
    };
    if end > chars.len() {
        return fail(format!(
            "span {start}..{end} exceeds text length {}",
            chars.len()
        ));
    }
    let surface = fields[3];
    // The mention keeps the surface as annotated; a mismatch against the
    // text slice is recorded (or fatal in strict mode).
    if let Some(slice) = chars.slice(span) {
        if slice != surface {
            let message = format!(
                "surface mismatch at {start}..{end}: annotation {surface:?} vs text {slice:?}"
            );
            if opts.strict {
                return Err(parse_error(location, message));
            }
            report.warn(opts.warning_cap, doc_id, format!("line {line_no}: {message}"));
        }
    }
    let etype = EntityType::parse(fields[4]);
    let ids = match fields[5] {
        "" | "-" => Vec::new(),
        raw => split_composite_ids(raw),
    };
    Ok(Some(
        Mention::new(span, surface, etype).with_ids(ids),
    ))
}

/// Renders one layer of a corpus as PubTator blocks.
///
/// Blocks appear in document order, separated by exactly one blank line,
/// with annotations in canonical mention order. Mentions without ids are
/// written with an id field of `-`. Serializing a corpus parsed from
/// PubTator input reproduces the input block for block.
pub fn serialize_pubtator(corpus: &Corpus, layer: &LayerSel) -> Result<String> {
    corpus.require_layer(layer)?;
    let mut blocks: Vec<String> = Vec::new();
    for doc in &corpus.documents {
        let chars = CharText::new(&doc.text);
        let (title, abstract_text) = title_abstract(doc, &chars)?;
        let mut lines: Vec<String> = Vec::new();
        lines.push(format!("{}|t|{}", doc.doc_id, title));
        if let Some(abs) = abstract_text {
            lines.push(format!("{}|a|{}", doc.doc_id, abs));
        }
        for mention in doc.layer(layer).unwrap_or_default() {
            let ids = if mention.ids.is_empty() {
                "-".to_string()
            } else {
                mention
                    .ids
                    .iter()
                    .map(|id| id.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            };
            lines.push(format!(
                "{}\t{}\t{}\t{}\t{}\t{}",
                doc.doc_id, mention.span.start, mention.span.end, mention.surface, mention.etype, ids
            ));
        }
        blocks.push(lines.join("\n"));
    }
    let mut out = blocks.join("\n\n");
    if !out.is_empty() {
        out.push('\n');
    }
    Ok(out)
}

/// Splits a document into title and optional abstract using its passage
/// map; documents without passages are rendered as a title-only block.
fn title_abstract(doc: &Document, chars: &CharText) -> Result<(String, Option<String>)> {
    if doc.passages.is_empty() {
        return Ok((doc.text.clone(), None));
    }
    if doc.passages.len() > 2 {
        return Err(Error::Contract(format!(
            "document {} has {} passages; title/abstract blocks support at most two",
            doc.doc_id,
            doc.passages.len()
        )));
    }
    let slice_passage = |p: &Passage| -> Result<String> {
        let span = Span::new(p.offset, p.offset + p.length.max(1)).map_err(|e| {
            Error::Contract(format!("document {}: bad passage: {e}", doc.doc_id))
        })?;
        if p.length == 0 {
            return Ok(String::new());
        }
        chars.slice(span).ok_or_else(|| {
            Error::Contract(format!(
                "document {}: passage {}..{} exceeds text bounds",
                doc.doc_id,
                p.offset,
                p.offset + p.length
            ))
        })
    };
    let title = slice_passage(&doc.passages[0])?;
    match doc.passages.get(1) {
        None => Ok((title, None)),
        Some(second) => {
            if second.offset != doc.passages[0].length + 1 {
                return Err(Error::Contract(format!(
                    "document {}: abstract passage must start one character after the title ({} != {})",
                    doc.doc_id,
                    second.offset,
                    doc.passages[0].length + 1
                )));
            }
            Ok((title, Some(slice_passage(second)?)))
        }
    }
}

fn schema_error(path: String, message: impl Into<String>) -> Error {
    Error::Schema {
        path,
        message: message.into(),
    }
}

fn jv_object<'a>(value: &'a Value, path: &str) -> Result<&'a serde_json::Map<String, Value>> {
    value
        .as_object()
        .ok_or_else(|| schema_error(path.to_string(), "expected object"))
}

fn jv_field<'a>(obj: &'a serde_json::Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema_error(format!("{path}.{key}"), "missing field"))
}

fn jv_str<'a>(value: &'a Value, path: &str) -> Result<&'a str> {
    value
        .as_str()
        .ok_or_else(|| schema_error(path.to_string(), "expected string"))
}

fn jv_usize(value: &Value, path: &str) -> Result<usize> {
    value
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| schema_error(path.to_string(), "expected non-negative integer"))
}

fn jv_array<'a>(value: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    value
        .as_array()
        .ok_or_else(|| schema_error(path.to_string(), "expected array"))
}

/// Parses newline-delimited interchange JSON into a corpus, loading
/// entities into `layer`.
///
/// Passage text is written into the document at its declared offset;
/// unclaimed gaps between passages become spaces. Entities with multiple
/// offset ranges are loaded with their covering envelope span and flagged
/// discontiguous.
pub fn parse_interchange_json(
    input: &str,
    layer: &LayerSel,
    opts: &ParseOptions,
) -> Result<(Corpus, ParseReport)> {
    let mut corpus = Corpus::new("");
    let mut report = ParseReport::default();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();

    for (index, raw) in input.lines().enumerate() {
        let line_no = index + 1;
        let root = format!("line {line_no}");
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| schema_error(root.clone(), format!("invalid JSON: {e}")))?;
        let obj = jv_object(&value, &root)?;
        let doc_id = jv_str(jv_field(obj, &root, "id")?, &format!("{root}.id"))?;
        if doc_id.is_empty() {
            return Err(schema_error(format!("{root}.id"), "empty document id"));
        }
        if seen_ids.contains(doc_id) {
            if opts.strict {
                return Err(parse_error(root, format!("duplicate document id {doc_id:?}")));
            }
            report.warn(
                opts.warning_cap,
                doc_id,
                format!("line {line_no}: duplicate document id; document skipped"),
            );
            report.dropped_unparseable += 1;
            continue;
        }

        let passages_path = format!("{root}.passages");
        let passages = jv_array(jv_field(obj, &root, "passages")?, &passages_path)?;
        if passages.is_empty() {
            return Err(schema_error(passages_path, "expected at least one passage"));
        }
        let mut spans: Vec<(String, usize, Vec<char>)> = Vec::new();
        for (pi, passage) in passages.iter().enumerate() {
            let ppath = format!("{passages_path}[{pi}]");
            let pobj = jv_object(passage, &ppath)?;
            let kind = jv_str(jv_field(pobj, &ppath, "kind")?, &format!("{ppath}.kind"))?;
            let offset = jv_usize(jv_field(pobj, &ppath, "offset")?, &format!("{ppath}.offset"))?;
            let text = jv_str(jv_field(pobj, &ppath, "text")?, &format!("{ppath}.text"))?;
            spans.push((kind.to_string(), offset, text.chars().collect()));
        }
        let total = spans
            .iter()
            .map(|(_, offset, chars)| offset + chars.len())
            .max()
            .unwrap_or(0);
        let mut buffer: Vec<char> = vec![' '; total];
        let mut occupied: Vec<bool> = vec![false; total];
        let mut doc_passages: Vec<Passage> = Vec::new();
        for (pi, (kind, offset, chars)) in spans.iter().enumerate() {
            for (ci, c) in chars.iter().enumerate() {
                let pos = offset + ci;
                if occupied[pos] {
                    return Err(schema_error(
                        format!("{passages_path}[{pi}]"),
                        format!("passage overlaps earlier passage at offset {pos}"),
                    ));
                }
                occupied[pos] = true;
                buffer[pos] = *c;
            }
            doc_passages.push(Passage {
                kind: kind.clone(),
                offset: *offset,
                length: chars.len(),
            });
        }
        let text: String = buffer.into_iter().collect();
        let mut doc = Document::new(doc_id, text);
        doc.passages = doc_passages;
        let chars = CharText::new(&doc.text);

        if let Some(entities_value) = obj.get("entities") {
            let entities_path = format!("{root}.entities");
            let entities = jv_array(entities_value, &entities_path)?;
            for (ei, entity) in entities.iter().enumerate() {
                let epath = format!("{entities_path}[{ei}]");
                match parse_json_entity(entity, &epath, doc_id, &chars, opts, &mut report, line_no)? {
                    Some(mention) => {
                        if mention.discontiguous {
                            report.dropped_discontiguous += 1;
                        }
                        doc.layer_mut(layer).push(mention);
                        report.annotations += 1;
                    }
                    None => report.dropped_unparseable += 1,
                }
            }
        }
        doc.sort_layers();
        seen_ids.insert(doc_id.to_string());
        corpus.documents.push(doc);
        report.documents += 1;
    }
    Ok((corpus, report))
}

fn parse_json_entity(
    entity: &Value,
    path: &str,
    doc_id: &str,
    chars: &CharText,
    opts: &ParseOptions,
    report: &mut ParseReport,
    line_no: usize,
) -> Result<Option<Mention>> {
    let obj = jv_object(entity, path)?;
    let etype = EntityType::parse(jv_str(
        jv_field(obj, path, "type")?,
        &format!("{path}.type"),
    )?);
    let offsets_path = format!("{path}.offsets");
    let offsets = jv_array(jv_field(obj, path, "offsets")?, &offsets_path)?;
    if offsets.is_empty() {
        return Err(schema_error(offsets_path, "expected at least one [start, end] range"));
    }
    let mut ranges: Vec<Span> = Vec::new();
    for (oi, range) in offsets.iter().enumerate() {
        let opath = format!("{offsets_path}[{oi}]");
        let pair = jv_array(range, &opath)?;
        if pair.len() != 2 {
            return Err(schema_error(opath, "expected [start, end]"));
        }
        let start = jv_usize(&pair[0], &format!("{opath}[0]"))?;
        let end = jv_usize(&pair[1], &format!("{opath}[1]"))?;
        let span = Span::new(start, end)
            .map_err(|e| schema_error(opath.clone(), e.to_string()))?;
        ranges.push(span);
    }
    let envelope = Span {
        start: ranges.iter().map(|r| r.start).min().unwrap(),
        end: ranges.iter().map(|r| r.end).max().unwrap(),
    };
    if envelope.end > chars.len() {
        let message = format!(
            "entity span {}..{} exceeds text length {}",
            envelope.start,
            envelope.end,
            chars.len()
        );
        if opts.strict {
            return Err(parse_error(path.to_string(), message));
        }
        report.warn(opts.warning_cap, doc_id, format!("line {line_no}: {message}"));
        return Ok(None);
    }
    let discontiguous = ranges.len() > 1;

    let texts: Vec<String> = match obj.get("text") {
        Some(value) => {
            let tpath = format!("{path}.text");
            jv_array(value, &tpath)?
                .iter()
                .enumerate()
                .map(|(ti, t)| jv_str(t, &format!("{tpath}[{ti}]")).map(str::to_string))
                .collect::<Result<Vec<String>>>()?
        }
        None => Vec::new(),
    };
    let surface = if !texts.is_empty() {
        texts.join(" ")
    } else if discontiguous {
        ranges
            .iter()
            .map(|r| chars.slice(*r).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(" ")
    } else {
        chars.slice(envelope).unwrap_or_default()
    };
    if !discontiguous && !texts.is_empty() {
        if let Some(slice) = chars.slice(envelope) {
            if slice != surface {
                let message = format!(
                    "surface mismatch at {}..{}: annotation {surface:?} vs text {slice:?}",
                    envelope.start, envelope.end
                );
                if opts.strict {
                    return Err(parse_error(path.to_string(), message));
                }
                report.warn(opts.warning_cap, doc_id, format!("line {line_no}: {message}"));
            }
        }
    }

    let mut ids: Vec<EntityId> = Vec::new();
    if let Some(value) = obj.get("normalized") {
        let npath = format!("{path}.normalized");
        for (ni, entry) in jv_array(value, &npath)?.iter().enumerate() {
            let epath = format!("{npath}[{ni}]");
            let eobj = jv_object(entry, &epath)?;
            let db = jv_str(jv_field(eobj, &epath, "db")?, &format!("{epath}.db"))?;
            let local = jv_str(jv_field(eobj, &epath, "id")?, &format!("{epath}.id"))?;
            let id = EntityId::from_parts(db, local)
                .map_err(|e| schema_error(epath, e.to_string()))?;
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
    }

    let mut mention = Mention::new(envelope, surface, etype).with_ids(ids);
    mention.discontiguous = discontiguous;
    Ok(Some(mention))
}

#[derive(Serialize)]
struct JsonPassage {
    kind: String,
    offset: usize,
    text: String,
}

#[derive(Serialize)]
struct JsonNormalized {
    db: String,
    id: String,
}

#[derive(Serialize)]
struct JsonEntity {
    #[serde(rename = "type")]
    etype: String,
    offsets: Vec<[usize; 2]>,
    text: Vec<String>,
    normalized: Vec<JsonNormalized>,
}

#[derive(Serialize)]
struct JsonDoc {
    id: String,
    passages: Vec<JsonPassage>,
    entities: Vec<JsonEntity>,
}

/// Renders one layer of a corpus as newline-delimited interchange JSON.
///
/// Documents without a passage map are emitted as a single `title` passage
/// covering the whole text. Discontiguous mentions are written with their
/// envelope range only, since the component ranges are not retained.
pub fn serialize_interchange_json(corpus: &Corpus, layer: &LayerSel) -> Result<String> {
    corpus.require_layer(layer)?;
    let mut out = String::new();
    for doc in &corpus.documents {
        let chars = CharText::new(&doc.text);
        let passages: Vec<JsonPassage> = if doc.passages.is_empty() {
            vec![JsonPassage {
                kind: "title".to_string(),
                offset: 0,
                text: doc.text.clone(),
            }]
        } else {
            doc.passages
                .iter()
                .map(|p| -> Result<JsonPassage> {
                    let text = if p.length == 0 {
                        String::new()
                    } else {
                        chars
                            .slice(Span::new(p.offset, p.offset + p.length)?)
                            .ok_or_else(|| {
                                Error::Contract(format!(
                                    "document {}: passage {}..{} exceeds text bounds",
                                    doc.doc_id,
                                    p.offset,
                                    p.offset + p.length
                                ))
                            })?
                    };
                    Ok(JsonPassage {
                        kind: p.kind.clone(),
                        offset: p.offset,
                        text,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        let entities: Vec<JsonEntity> = doc
            .layer(layer)
            .unwrap_or_default()
            .iter()
            .map(|m| JsonEntity {
                etype: m.etype.name().to_string(),
                offsets: vec![[m.span.start, m.span.end]],
                text: vec![m.surface.clone()],
                normalized: m
                    .ids
                    .iter()
                    .map(|id| JsonNormalized {
                        db: id.namespace().to_string(),
                        id: id.local().to_string(),
                    })
                    .collect(),
            })
            .collect();
        let line = serde_json::to_string(&JsonDoc {
            id: doc.doc_id.clone(),
            passages,
            entities,
        })
        .expect("interchange document serialization cannot fail");
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Returns a copy of the corpus restricted to evaluation-eligible mentions:
/// discontiguous mentions are removed from every layer (gold included), and
/// only mentions whose type is in `types` are kept.
///
/// The type filter is literal set membership: passing every type present
/// yields the identity on contiguous corpora.
pub fn filter_eligible(corpus: &Corpus, types: &BTreeSet<EntityType>) -> Corpus {
    let mut filtered = corpus.clone();
    for doc in &mut filtered.documents {
        doc.gold
            .retain(|m| !m.discontiguous && types.contains(&m.etype));
        for mentions in doc.layers.values_mut() {
            mentions.retain(|m| !m.discontiguous && types.contains(&m.etype));
        }
    }
    filtered
}
