//! Span and identifier matching predicates, and the greedy aligner that
//! pairs gold mentions with predictions.

use serde::{Deserialize, Serialize};

use crate::model::{Mention, Span};
use crate::{Error, Result};

/// Evaluation regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMode {
    /// Span must match strictly *and* identifier sets must intersect.
    ExtractionStrict,
    /// Span must match strictly; identifiers are ignored.
    NerStrict,
    /// Span containment in either direction; identifiers are ignored.
    NerLenient,
}

impl MatchMode {
    /// Stable name used in CLI flags and metric records.
    pub fn name(&self) -> &'static str {
        match self {
            MatchMode::ExtractionStrict => "extraction",
            MatchMode::NerStrict => "ner-strict",
            MatchMode::NerLenient => "ner-lenient",
        }
    }

    /// Parses the CLI spelling of a mode.
    pub fn parse(name: &str) -> Option<MatchMode> {
        match name.to_ascii_lowercase().as_str() {
            "extraction" | "extraction-strict" => Some(MatchMode::ExtractionStrict),
            "ner-strict" => Some(MatchMode::NerStrict),
            "ner-lenient" => Some(MatchMode::NerLenient),
            _ => None,
        }
    }
}

/// How much boundary slack the strict span predicate tolerates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Slack {
    /// One character of slack at exactly one end (the default).
    #[default]
    OneEnd,
    /// Up to one character of slack at each end simultaneously; intended
    /// for sensitivity runs only.
    BothEnds,
}

/// Aligner configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlignOptions {
    pub slack: Slack,
}

/// Strict span agreement: spans are equal, or they differ by exactly one
/// character at exactly one end. With [`Slack::BothEnds`] each end may
/// independently differ by at most one character.
pub fn span_match_strict(gold: Span, pred: Span, slack: Slack) -> bool {
    let ds = gold.start.abs_diff(pred.start);
    let de = gold.end.abs_diff(pred.end);
    match slack {
        Slack::OneEnd => (ds == 0 && de == 0) || (ds == 1 && de == 0) || (ds == 0 && de == 1),
        Slack::BothEnds => ds <= 1 && de <= 1,
    }
}

/// Lenient span agreement: one span contains the other.
pub fn span_match_lenient(gold: Span, pred: Span) -> bool {
    (pred.start >= gold.start && pred.end <= gold.end)
        || (gold.start >= pred.start && gold.end <= pred.end)
}

/// Identifier agreement: the canonical id sets intersect. Composite
/// mentions therefore match when *any* of their identifiers agrees.
pub fn id_match(gold: &Mention, pred: &Mention) -> bool {
    gold.ids.iter().any(|id| pred.ids.contains(id))
}

/// How closely a matched pair's spans agreed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exactness {
    /// Identical spans.
    Exact,
    /// One character of boundary slack.
    OffByOne,
    /// Containment only (lenient mode).
    Contained,
}

/// Result of aligning one gold layer against one prediction layer.
///
/// Indexes refer to positions in the input slices. Every index appears at
/// most once across `pairs` and the corresponding unmatched list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    /// `(gold index, prediction index, exactness)` per matched pair.
    pub pairs: Vec<(usize, usize, Exactness)>,
    pub unmatched_gold: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

impl Alignment {
    /// Number of matched pairs (true positives).
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }
}

fn spans_sorted(mentions: &[Mention]) -> bool {
    mentions
        .windows(2)
        .all(|w| (w[0].span.start, w[0].span.end) <= (w[1].span.start, w[1].span.end))
}

fn single_type(mentions: &[Mention]) -> bool {
    mentions
        .windows(2)
        .all(|w| w[0].etype == w[1].etype)
}

/// Pairs gold mentions with predictions using a deterministic two-pass
/// greedy strategy:
///
/// 1. exact span matches first, gold processed left to right, each taking
///    the leftmost eligible unmatched prediction;
/// 2. remaining gold matched under the mode's span predicate the same way.
///
/// Under [`MatchMode::ExtractionStrict`] both passes additionally require
/// [`id_match`]. Both inputs must be sorted by `(start, end)` and contain a
/// single entity type; violations return [`Error::Contract`].
pub fn align(
    gold: &[Mention],
    pred: &[Mention],
    mode: MatchMode,
    opts: &AlignOptions,
) -> Result<Alignment> {
    if !spans_sorted(gold) || !spans_sorted(pred) {
        return Err(Error::Contract(
            "align requires inputs sorted by (start, end)".into(),
        ));
    }
    if !single_type(gold) || !single_type(pred) {
        return Err(Error::Contract(
            "align requires inputs filtered to a single entity type".into(),
        ));
    }

    let ids_required = mode == MatchMode::ExtractionStrict;
    let mut gold_match: Vec<Option<usize>> = vec![None; gold.len()];
    let mut pred_taken: Vec<bool> = vec![false; pred.len()];

    // Pass 1: exact spans.
    for (g, gm) in gold.iter().enumerate() {
        for (p, pm) in pred.iter().enumerate() {
            if pred_taken[p] || gm.span != pm.span {
                continue;
            }
            if ids_required && !id_match(gm, pm) {
                continue;
            }
            gold_match[g] = Some(p);
            pred_taken[p] = true;
            break;
        }
    }

    // Pass 2: the mode's span predicate over what remains.
    for (g, gm) in gold.iter().enumerate() {
        if gold_match[g].is_some() {
            continue;
        }
        for (p, pm) in pred.iter().enumerate() {
            if pred_taken[p] {
                continue;
            }
            let span_ok = match mode {
                MatchMode::ExtractionStrict | MatchMode::NerStrict => {
                    span_match_strict(gm.span, pm.span, opts.slack)
                }
                MatchMode::NerLenient => span_match_lenient(gm.span, pm.span),
            };
            if !span_ok {
                continue;
            }
            if ids_required && !id_match(gm, pm) {
                continue;
            }
            gold_match[g] = Some(p);
            pred_taken[p] = true;
            break;
        }
    }

    let mut alignment = Alignment::default();
    for (g, matched) in gold_match.iter().enumerate() {
        match matched {
            Some(p) => {
                let exactness = classify(gold[g].span, pred[*p].span, opts.slack);
                alignment.pairs.push((g, *p, exactness));
            }
            None => alignment.unmatched_gold.push(g),
        }
    }
    for (p, taken) in pred_taken.iter().enumerate() {
        if !taken {
            alignment.unmatched_pred.push(p);
        }
    }
    Ok(alignment)
}

fn classify(gold: Span, pred: Span, slack: Slack) -> Exactness {
    if gold == pred {
        Exactness::Exact
    } else if span_match_strict(gold, pred, slack) {
        Exactness::OffByOne
    } else {
        Exactness::Contained
    }
}
