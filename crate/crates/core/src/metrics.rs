//! Precision/recall/F1 computation at mention, document, and per-entity
//! (macro) level, cross-corpus averaging, and serializable metric records.
//!
//! All aggregation is integer tally arithmetic until the final division, so
//! merge order never affects results. Zero denominators conventionally yield
//! a score of 0.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matching::{align, AlignOptions, MatchMode};
use crate::model::{Corpus, Document, EntityId, EntityType, LayerSel, Mention};
use crate::{Error, Result};

/// Raw true-positive / false-positive / false-negative counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Tally {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Tally {
        Tally { tp, fp, fn_ }
    }
}

impl Add for Tally {
    type Output = Tally;
    fn add(self, other: Tally) -> Tally {
        Tally {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

impl AddAssign for Tally {
    fn add_assign(&mut self, other: Tally) {
        *self = *self + other;
    }
}

impl std::iter::Sum for Tally {
    fn sum<I: Iterator<Item = Tally>>(iter: I) -> Tally {
        iter.fold(Tally::default(), |acc, t| acc + t)
    }
}

/// Precision, recall, and F1 as fractions in `[0, 1]`. Rendered as
/// percentages with two decimals by [`percent`] and [`fmt_percent`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `numerator / denominator`, or 0 when the denominator is 0.
fn ratio(numerator: u64, denominator: u64) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Harmonic mean of precision and recall. Scale-invariant: works for
/// fractions and percentages alike. Returns 0 when both inputs are 0.
pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Rounds to two decimals, half away from zero (half-up for the
/// non-negative values produced here).
pub fn round2(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

/// A fraction as a percentage rounded to two decimals.
pub fn percent(fraction: f64) -> f64 {
    round2(fraction * 100.0)
}

/// Renders a fraction as a fixed two-decimal percentage string.
pub fn fmt_percent(fraction: f64) -> String {
    format!("{:.2}", percent(fraction))
}

/// Converts a tally into precision/recall/F1 with the zero-denominator
/// convention.
pub fn score(tally: &Tally) -> Score {
    let precision = ratio(tally.tp, tally.tp + tally.fp);
    let recall = ratio(tally.tp, tally.tp + tally.fn_);
    Score {
        precision,
        recall,
        f1: harmonic_f1(precision, recall),
    }
}

/// A tally together with its derived score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub tally: Tally,
    pub score: Score,
}

impl Measurement {
    pub fn from_tally(tally: Tally) -> Measurement {
        Measurement {
            tally,
            score: score(&tally),
        }
    }
}

/// Mentions of `etype` that participate in evaluation: contiguous and of
/// the requested type, in their original (sorted) order.
fn eligible(mentions: &[Mention], etype: &EntityType) -> Vec<Mention> {
    mentions
        .iter()
        .filter(|m| !m.discontiguous && &m.etype == etype)
        .cloned()
        .collect()
}

fn tool_layer<'a>(doc: &'a Document, layer: &str) -> &'a [Mention] {
    doc.layers.get(layer).map(|v| v.as_slice()).unwrap_or(&[])
}

/// Mention-level micro-averaged evaluation: per-document alignments whose
/// tallies are summed across the corpus before scoring.
///
/// `tp + fn` always equals the number of eligible gold mentions of `etype`,
/// and `tp + fp` the number of eligible predictions.
pub fn micro_mention(
    corpus: &Corpus,
    layer: &str,
    etype: &EntityType,
    mode: MatchMode,
    opts: &AlignOptions,
) -> Result<Measurement> {
    corpus.require_layer(&LayerSel::Tool(layer.to_string()))?;
    let tally = corpus
        .documents
        .par_iter()
        .map(|doc| {
            let gold = eligible(&doc.gold, etype);
            let pred = eligible(tool_layer(doc, layer), etype);
            let alignment = align(&gold, &pred, mode, opts)?;
            Ok(Tally::new(
                alignment.tp() as u64,
                alignment.unmatched_pred.len() as u64,
                alignment.unmatched_gold.len() as u64,
            ))
        })
        .collect::<Result<Vec<Tally>>>()?
        .into_iter()
        .sum();
    Ok(Measurement::from_tally(tally))
}

/// Document-level evaluation: spans are ignored and each document is
/// reduced to its sets of unique gold and predicted identifiers (composite
/// mentions contribute every identifier). Per-document set tallies are
/// micro-aggregated across the corpus.
pub fn document_level(corpus: &Corpus, layer: &str, etype: &EntityType) -> Result<Measurement> {
    corpus.require_layer(&LayerSel::Tool(layer.to_string()))?;
    let tally = corpus
        .documents
        .par_iter()
        .map(|doc| {
            let gold_ids: BTreeSet<&EntityId> = eligible_ids(&doc.gold, etype);
            let pred_ids: BTreeSet<&EntityId> = eligible_ids(tool_layer(doc, layer), etype);
            Tally::new(
                gold_ids.intersection(&pred_ids).count() as u64,
                pred_ids.difference(&gold_ids).count() as u64,
                gold_ids.difference(&pred_ids).count() as u64,
            )
        })
        .sum();
    Ok(Measurement::from_tally(tally))
}

fn eligible_ids<'a>(mentions: &'a [Mention], etype: &EntityType) -> BTreeSet<&'a EntityId> {
    mentions
        .iter()
        .filter(|m| !m.discontiguous && &m.etype == etype)
        .flat_map(|m| m.ids.iter())
        .collect()
}

/// Per-entity tallies and the macro-averaged score derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroMeasurement {
    pub score: Score,
    /// Tally per gold/predicted entity identifier.
    pub entities: BTreeMap<EntityId, Tally>,
    /// The pooled mention-level tally of the same alignments, kept so
    /// records can report raw counts alongside the macro score.
    pub pooled: Tally,
    /// Number of entities with a defined precision (`tp + fp > 0`).
    pub defined_precision: usize,
    /// Number of entities with a defined recall (`tp + fn > 0`).
    pub defined_recall: usize,
}

/// Per-entity (macro) evaluation.
///
/// Every aligned pair credits a true positive to the gold identifier that
/// matched; every unmatched prediction charges a false positive to each of
/// its identifiers; every unmatched gold mention charges a false negative to
/// each of its identifiers. Per-entity precision is defined iff `tp+fp > 0`
/// and recall iff `tp+fn > 0`; the macro precision/recall are the means of
/// the *defined* components only, and macro F1 is their harmonic mean.
/// Entities that only ever appear as false positives therefore still pull
/// macro precision down without affecting macro recall.
pub fn macro_entity(
    corpus: &Corpus,
    layer: &str,
    etype: &EntityType,
    mode: MatchMode,
    opts: &AlignOptions,
) -> Result<MacroMeasurement> {
    corpus.require_layer(&LayerSel::Tool(layer.to_string()))?;
    let per_doc: Vec<(BTreeMap<EntityId, Tally>, Tally)> = corpus
        .documents
        .par_iter()
        .map(|doc| {
            let gold = eligible(&doc.gold, etype);
            let pred = eligible(tool_layer(doc, layer), etype);
            let alignment = align(&gold, &pred, mode, opts)?;
            let mut entities: BTreeMap<EntityId, Tally> = BTreeMap::new();
            for (g, p, _) in &alignment.pairs {
                let gm = &gold[*g];
                let pm = &pred[*p];
                // The gold id that matched: first intersecting id in gold
                // order; in recognition modes a pair may have no
                // intersection, in which case the primary gold id is
                // credited.
                let credited = gm
                    .ids
                    .iter()
                    .find(|id| pm.ids.contains(id))
                    .or_else(|| gm.ids.first());
                if let Some(id) = credited {
                    entities.entry(id.clone()).or_default().tp += 1;
                }
            }
            for g in &alignment.unmatched_gold {
                for id in &gold[*g].ids {
                    entities.entry(id.clone()).or_default().fn_ += 1;
                }
            }
            for p in &alignment.unmatched_pred {
                for id in &pred[*p].ids {
                    entities.entry(id.clone()).or_default().fp += 1;
                }
            }
            let pooled = Tally::new(
                alignment.tp() as u64,
                alignment.unmatched_pred.len() as u64,
                alignment.unmatched_gold.len() as u64,
            );
            Ok((entities, pooled))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entities: BTreeMap<EntityId, Tally> = BTreeMap::new();
    let mut pooled = Tally::default();
    for (doc_entities, doc_pooled) in per_doc {
        for (id, tally) in doc_entities {
            *entities.entry(id).or_default() += tally;
        }
        pooled += doc_pooled;
    }

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut defined_precision = 0;
    let mut defined_recall = 0;
    for tally in entities.values() {
        if tally.tp + tally.fp > 0 {
            precision_sum += ratio(tally.tp, tally.tp + tally.fp);
            defined_precision += 1;
        }
        if tally.tp + tally.fn_ > 0 {
            recall_sum += ratio(tally.tp, tally.tp + tally.fn_);
            defined_recall += 1;
        }
    }
    if defined_precision == 0 && defined_recall == 0 {
        log::warn!(
            "macro evaluation of layer {layer:?} for type {etype} found no entity with a defined component; reporting zeros"
        );
    }
    let precision = if defined_precision > 0 {
        precision_sum / defined_precision as f64
    } else {
        0.0
    };
    let recall = if defined_recall > 0 {
        recall_sum / defined_recall as f64
    } else {
        0.0
    };
    Ok(MacroMeasurement {
        score: Score {
            precision,
            recall,
            f1: harmonic_f1(precision, recall),
        },
        entities,
        pooled,
        defined_precision,
        defined_recall,
    })
}

/// Equal-weight arithmetic mean of precision, recall, and F1 across
/// corpora. The averaged F1 is *not* recomputed from the averaged precision
/// and recall. Errors on empty input.
pub fn cross_corpus_average(rows: &[Score]) -> Result<Score> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("cross_corpus_average of zero rows".into()));
    }
    let n = rows.len() as f64;
    Ok(Score {
        precision: rows.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: rows.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: rows.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}

/// Picks the entry with the highest F1; ties go to the lexicographically
/// smallest name. Returns `None` on an empty map.
pub fn select_best<'a>(scores: &'a BTreeMap<String, Score>) -> Option<(&'a str, &'a Score)> {
    let mut best: Option<(&str, &Score)> = None;
    for (name, candidate) in scores {
        match best {
            Some((_, incumbent)) if candidate.f1 <= incumbent.f1 => {}
            _ => best = Some((name.as_str(), candidate)),
        }
    }
    best
}

/// Evaluation granularity of a metric record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Mention,
    Document,
    Macro,
}

impl Level {
    pub fn name(&self) -> &'static str {
        match self {
            Level::Mention => "mention",
            Level::Document => "document",
            Level::Macro => "macro",
        }
    }

    pub fn parse(name: &str) -> Option<Level> {
        match name.to_ascii_lowercase().as_str() {
            "mention" => Some(Level::Mention),
            "document" => Some(Level::Document),
            "macro" => Some(Level::Macro),
            _ => None,
        }
    }
}

/// One evaluation result row: where it came from, how it was computed, the
/// rounded percentages, and the raw tally they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub corpus: String,
    pub layer: String,
    #[serde(rename = "type")]
    pub etype: String,
    pub mode: String,
    pub level: String,
    /// Percentage, two decimals.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MetricRecord {
    pub fn new(
        corpus: &str,
        layer: &str,
        etype: &EntityType,
        mode: MatchMode,
        level: Level,
        score: Score,
        tally: Tally,
    ) -> MetricRecord {
        MetricRecord {
            corpus: corpus.to_string(),
            layer: layer.to_string(),
            etype: etype.name().to_string(),
            mode: mode.name().to_string(),
            level: level.name().to_string(),
            precision: percent(score.precision),
            recall: percent(score.recall),
            f1: percent(score.f1),
            tp: tally.tp,
            fp: tally.fp,
            fn_: tally.fn_,
        }
    }
}

/// Column order of the tab-separated record format.
pub const RECORD_COLUMNS: [&str; 11] = [
    "corpus", "layer", "type", "mode", "level", "precision", "recall", "f1", "tp", "fp", "fn",
];

/// Serializes records as TSV with a header row.
pub fn records_to_tsv(records: &[MetricRecord]) -> String {
    let mut out = RECORD_COLUMNS.join("\t");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{}\t{}\t{}\n",
            r.corpus, r.layer, r.etype, r.mode, r.level, r.precision, r.recall, r.f1, r.tp, r.fp,
            r.fn_
        ));
    }
    out
}

/// Parses records from the TSV produced by [`records_to_tsv`].
pub fn records_from_tsv(input: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = input.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("record TSV has no header".into()))?;
    let expected = RECORD_COLUMNS.join("\t");
    if header.1.trim_end() != expected {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: format!("expected record header {expected:?}"),
        });
    }
    let mut records = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != RECORD_COLUMNS.len() {
            return Err(Error::Parse {
                location: format!("line {}", index + 1),
                message: format!(
                    "expected {} tab-separated fields, found {}",
                    RECORD_COLUMNS.len(),
                    fields.len()
                ),
            });
        }
        let parse_f64 = |field: &str, name: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| Error::Parse {
                location: format!("line {}", index + 1),
                message: format!("invalid {name} value {field:?}"),
            })
        };
        let parse_u64 = |field: &str, name: &str| -> Result<u64> {
            field.parse::<u64>().map_err(|_| Error::Parse {
                location: format!("line {}", index + 1),
                message: format!("invalid {name} value {field:?}"),
            })
        };
        records.push(MetricRecord {
            corpus: fields[0].to_string(),
            layer: fields[1].to_string(),
            etype: fields[2].to_string(),
            mode: fields[3].to_string(),
            level: fields[4].to_string(),
            precision: parse_f64(fields[5], "precision")?,
            recall: parse_f64(fields[6], "recall")?,
            f1: parse_f64(fields[7], "f1")?,
            tp: parse_u64(fields[8], "tp")?,
            fp: parse_u64(fields[9], "fp")?,
            fn_: parse_u64(fields[10], "fn")?,
        });
    }
    Ok(records)
}
