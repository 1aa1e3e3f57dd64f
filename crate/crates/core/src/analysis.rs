//! Agreement and corpus-composition analysis.
//!
//! Three independent analyses over a corpus:
//!
//! * [`overlap`] — which gold mentions each tool layer recovers as true
//!   positives, broken down by how many tools agree and which tool found
//!   a mention exclusively;
//! * [`distribution`] — the most frequent entities of a type in one layer,
//!   with their surface-form breakdown;
//! * [`sentence_overlap`] — sentences shared between two corpora after
//!   normalization, to surface text reuse across collections.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::matching::{align, AlignOptions, MatchMode};
use crate::metrics::round2;
use crate::model::{Corpus, EntityId, EntityType, LayerSel, Mention};
use crate::{Error, Result};

/// Agreement between tool layers over gold true positives.
///
/// The universe is the set of gold mentions (of the requested type,
/// contiguous only) recovered by at least one tool. Every member is
/// counted in exactly one cardinality bucket, so the bucket counts sum to
/// the universe size.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapSummary {
    pub tools: Vec<String>,
    /// Gold mentions recovered by at least one tool.
    pub universe: usize,
    /// Number of tools agreeing → how many gold mentions.
    pub by_cardinality: BTreeMap<usize, usize>,
    /// Gold mentions recovered by every tool.
    pub all_tools: usize,
    /// `all_tools / universe` (0 when the universe is empty).
    pub all_tools_fraction: f64,
    /// Tool → gold mentions only that tool recovered.
    pub exclusive: BTreeMap<String, usize>,
    /// Tool → exclusive count / universe.
    pub exclusive_fraction: BTreeMap<String, f64>,
    /// Tool → exclusive counts per entity, largest first.
    pub exclusive_by_id: BTreeMap<String, Vec<(EntityId, usize)>>,
}

/// Computes tool-agreement overlap over the gold layer.
///
/// A gold mention is keyed by its document and its index among that
/// document's eligible gold mentions, so the same mention is recognized
/// across tools. Requires at least one tool layer.
pub fn overlap(
    corpus: &Corpus,
    tools: &[String],
    etype: &EntityType,
    mode: MatchMode,
    opts: &AlignOptions,
) -> Result<OverlapSummary> {
    if tools.is_empty() {
        return Err(Error::EmptyInput("no tool layers requested".into()));
    }
    for tool in tools {
        corpus.require_layer(&LayerSel::Tool(tool.clone()))?;
    }
    let mut recovered: BTreeMap<String, BTreeSet<(usize, usize)>> = BTreeMap::new();
    let mut gold_ids: BTreeMap<(usize, usize), Vec<EntityId>> = BTreeMap::new();
    for (doc_index, doc) in corpus.documents.iter().enumerate() {
        let gold = eligible(&doc.gold, etype);
        for (gold_index, mention) in gold.iter().enumerate() {
            gold_ids.insert((doc_index, gold_index), mention.ids.clone());
        }
        for tool in tools {
            let predicted = doc
                .layer(&LayerSel::Tool(tool.clone()))
                .map(|mentions| eligible(mentions, etype))
                .unwrap_or_default();
            let alignment = align(&gold, &predicted, mode, opts)?;
            let keys = recovered.entry(tool.clone()).or_default();
            for (gold_index, _, _) in &alignment.pairs {
                keys.insert((doc_index, *gold_index));
            }
        }
    }

    let universe: BTreeSet<(usize, usize)> = recovered.values().flatten().copied().collect();
    let mut by_cardinality: BTreeMap<usize, usize> = BTreeMap::new();
    let mut all_tools = 0usize;
    let mut exclusive: BTreeMap<String, usize> =
        tools.iter().map(|t| (t.clone(), 0usize)).collect();
    let mut exclusive_ids: BTreeMap<String, BTreeMap<EntityId, usize>> = BTreeMap::new();
    for key in &universe {
        let holders: Vec<&String> = tools
            .iter()
            .filter(|tool| recovered[*tool].contains(key))
            .collect();
        *by_cardinality.entry(holders.len()).or_insert(0) += 1;
        if holders.len() == tools.len() {
            all_tools += 1;
        }
        if let [only] = holders.as_slice() {
            *exclusive.get_mut(*only).expect("initialized above") += 1;
            if let Some(first) = gold_ids.get(key).and_then(|ids| ids.first()) {
                *exclusive_ids
                    .entry((*only).clone())
                    .or_default()
                    .entry(first.clone())
                    .or_insert(0) += 1;
            }
        }
    }

    let fraction = |count: usize| {
        if universe.is_empty() {
            0.0
        } else {
            count as f64 / universe.len() as f64
        }
    };
    let exclusive_fraction = exclusive
        .iter()
        .map(|(tool, count)| (tool.clone(), fraction(*count)))
        .collect();
    let exclusive_by_id = tools
        .iter()
        .map(|tool| {
            let mut rows: Vec<(EntityId, usize)> = exclusive_ids
                .remove(tool)
                .unwrap_or_default()
                .into_iter()
                .collect();
            rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (tool.clone(), rows)
        })
        .collect();
    Ok(OverlapSummary {
        tools: tools.to_vec(),
        universe: universe.len(),
        by_cardinality,
        all_tools,
        all_tools_fraction: fraction(all_tools),
        exclusive,
        exclusive_fraction,
        exclusive_by_id,
    })
}

fn eligible(mentions: &[Mention], etype: &EntityType) -> Vec<Mention> {
    mentions
        .iter()
        .filter(|m| !m.discontiguous && &m.etype == etype)
        .cloned()
        .collect()
}

/// Surface form of one entity with its share of the type's mentions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceStat {
    pub surface: String,
    pub count: usize,
    /// Fraction of all attributed mentions of the type (not just of this
    /// entity's mentions).
    pub share: f64,
}

/// One entity in a frequency distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionRow {
    pub id: EntityId,
    pub count: usize,
    /// `count / total_mentions`.
    pub share: f64,
    /// Up to three most frequent surface forms (case-sensitive).
    pub surfaces: Vec<SurfaceStat>,
}

/// Entity frequency distribution for one (layer, type) pair.
#[derive(Debug, Clone, Serialize)]
pub struct Distribution {
    pub etype: EntityType,
    /// Mentions attributed to an entity (mentions without identifiers are
    /// not counted).
    pub total_mentions: usize,
    pub unique_entities: usize,
    pub rows: Vec<DistributionRow>,
}

/// Computes the top-`k` entities of `etype` in `layer` by mention count.
///
/// Every mention is attributed to its first identifier; mentions without
/// identifiers are skipped. Ties rank by identifier. Discontiguous
/// mentions are excluded unless `include_discontiguous`.
pub fn distribution(
    corpus: &Corpus,
    layer: &LayerSel,
    etype: &EntityType,
    k: usize,
    include_discontiguous: bool,
) -> Result<Distribution> {
    corpus.require_layer(layer)?;
    let mut counts: BTreeMap<EntityId, usize> = BTreeMap::new();
    let mut surfaces: BTreeMap<EntityId, BTreeMap<String, usize>> = BTreeMap::new();
    let mut total = 0usize;
    for doc in &corpus.documents {
        for mention in doc.layer(layer).unwrap_or(&[]) {
            if &mention.etype != etype || (mention.discontiguous && !include_discontiguous) {
                continue;
            }
            let Some(first) = mention.ids.first() else {
                continue;
            };
            total += 1;
            *counts.entry(first.clone()).or_insert(0) += 1;
            *surfaces
                .entry(first.clone())
                .or_default()
                .entry(mention.surface.clone())
                .or_insert(0) += 1;
        }
    }
    let unique_entities = counts.len();
    let mut ranked: Vec<(EntityId, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    let rows = ranked
        .into_iter()
        .map(|(id, count)| {
            let mut forms: Vec<(String, usize)> = surfaces
                .remove(&id)
                .unwrap_or_default()
                .into_iter()
                .collect();
            forms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            forms.truncate(3);
            let surfaces = forms
                .into_iter()
                .map(|(surface, count)| SurfaceStat {
                    surface,
                    count,
                    share: count as f64 / total as f64,
                })
                .collect();
            DistributionRow {
                id,
                count,
                share: count as f64 / total as f64,
                surfaces,
            }
        })
        .collect();
    Ok(Distribution {
        etype: etype.clone(),
        total_mentions: total,
        unique_entities,
        rows,
    })
}

/// Renders a distribution share as a percentage with two decimals.
pub fn share_percent(share: f64) -> f64 {
    round2(share * 100.0)
}

/// Sentences shared between two corpora.
#[derive(Debug, Clone, Serialize)]
pub struct SentenceOverlap {
    /// Distinct normalized sentences in the first corpus.
    pub total_a: usize,
    /// Distinct normalized sentences in the second corpus.
    pub total_b: usize,
    pub shared: usize,
    /// The shared normalized sentences, sorted.
    pub sentences: Vec<String>,
}

/// Counts normalized sentences common to both corpora.
pub fn sentence_overlap(a: &Corpus, b: &Corpus) -> SentenceOverlap {
    let collect = |corpus: &Corpus| -> BTreeSet<String> {
        corpus
            .documents
            .iter()
            .flat_map(|doc| split_sentences(&doc.text))
            .map(|s| normalize_sentence(&s))
            .filter(|s| !s.is_empty())
            .collect()
    };
    let set_a = collect(a);
    let set_b = collect(b);
    let sentences: Vec<String> = set_a.intersection(&set_b).cloned().collect();
    SentenceOverlap {
        total_a: set_a.len(),
        total_b: set_b.len(),
        shared: sentences.len(),
        sentences,
    }
}

/// Abbreviations that suppress a sentence boundary at their final period.
const ABBREVIATIONS: [&str; 4] = ["e.g.", "i.e.", "fig.", "et al."];

/// Splits text into sentences with a rule-based boundary detector.
///
/// A boundary is a `.`, `!`, or `?` followed by whitespace and an
/// uppercase letter or digit. A period does not end a sentence when the
/// text up to it ends with a known abbreviation (case-insensitive).
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == '!' || c == '?' {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let boundary = j > i + 1
                && j < chars.len()
                && (chars[j].is_uppercase() || chars[j].is_ascii_digit())
                && !(c == '.' && ends_with_abbreviation(&chars[..=i]));
            if boundary {
                let sentence: String = chars[start..=i].iter().collect();
                let sentence = sentence.trim();
                if !sentence.is_empty() {
                    sentences.push(sentence.to_string());
                }
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let tail = tail.trim();
        if !tail.is_empty() {
            sentences.push(tail.to_string());
        }
    }
    sentences
}

fn ends_with_abbreviation(prefix: &[char]) -> bool {
    let tail_len = prefix.len().min(8);
    let tail: String = prefix[prefix.len() - tail_len..]
        .iter()
        .collect::<String>()
        .to_lowercase();
    ABBREVIATIONS.iter().any(|abbr| tail.ends_with(abbr))
}

/// Lowercases, collapses whitespace runs to single spaces, and trims.
pub fn normalize_sentence(sentence: &str) -> String {
    sentence
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}
