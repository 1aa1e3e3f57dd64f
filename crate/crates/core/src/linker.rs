//! Dictionary-based entity detection and vocabulary normalization.
//!
//! An [`AliasIndex`] maps case-folded vocabulary names and synonyms to
//! identifiers. [`detect`] finds exact alias matches in document text with
//! a greedy longest-window scan; [`normalize`] links free text to ranked
//! identifier candidates, falling back from exact lookup to character
//! 3-gram TF-IDF cosine similarity; [`link_corpus`] runs both as a
//! pipeline that writes a tool layer.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::idmap::Vocabulary;
use crate::model::{CharText, Corpus, Document, EntityId, EntityType, LayerSel, Mention, Span};
use crate::Result;

/// Widest token window tried during detection.
pub const DEFAULT_MAX_TOKENS: usize = 8;
/// Similarity threshold below which normalization candidates are dropped.
pub const DEFAULT_TAU: f64 = 0.7;

#[derive(Debug, Clone)]
struct AliasEntry {
    /// Identifiers this alias names, with the entity type of the
    /// vocabulary each came from. Sorted and deduplicated.
    targets: Vec<(EntityId, EntityType)>,
    /// TF-IDF weighted 3-gram vector of the alias.
    weights: HashMap<String, f64>,
    norm: f64,
}

/// Case-folded alias dictionary with precomputed 3-gram TF-IDF vectors.
///
/// The weighting scheme: grams are character trigrams of the alias padded
/// with `#` on both sides; term frequency is the gram's count within the
/// alias; `idf(g) = ln(1 + N / df(g))` where `N` is the number of distinct
/// aliases in the index and `df(g)` the number of aliases containing `g`.
#[derive(Debug, Clone)]
pub struct AliasIndex {
    entries: Vec<AliasEntry>,
    lookup: HashMap<String, usize>,
    idf: HashMap<String, f64>,
    max_alias_tokens: usize,
}

impl AliasIndex {
    /// Number of distinct folded aliases.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lowercases, trims, and collapses whitespace runs to single spaces.
fn fold(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Character trigram counts of `#<folded>#`.
fn grams(folded: &str) -> HashMap<String, usize> {
    let padded: Vec<char> = std::iter::once('#')
        .chain(folded.chars())
        .chain(std::iter::once('#'))
        .collect();
    let mut counts = HashMap::new();
    for window in padded.windows(3) {
        *counts.entry(window.iter().collect::<String>()).or_insert(0) += 1;
    }
    counts
}

/// Builds an alias index over the names and synonyms of the given
/// vocabularies. Aliases folding to the same string merge their targets.
pub fn build_index(vocabularies: &[Vocabulary]) -> AliasIndex {
    let mut by_alias: BTreeMap<String, BTreeSet<(EntityId, EntityType)>> = BTreeMap::new();
    for vocabulary in vocabularies {
        for entry in &vocabulary.entries {
            for raw in entry.name.iter().chain(entry.synonyms.iter()) {
                let folded = fold(raw);
                if folded.is_empty() {
                    continue;
                }
                by_alias
                    .entry(folded)
                    .or_default()
                    .insert((entry.id.clone(), vocabulary.etype.clone()));
            }
        }
    }
    let total = by_alias.len();
    let mut df: HashMap<String, usize> = HashMap::new();
    for alias in by_alias.keys() {
        for gram in grams(alias).keys() {
            *df.entry(gram.clone()).or_insert(0) += 1;
        }
    }
    let idf: HashMap<String, f64> = df
        .into_iter()
        .map(|(gram, df)| (gram, (1.0 + total as f64 / df as f64).ln()))
        .collect();
    let mut entries = Vec::with_capacity(total);
    let mut lookup = HashMap::with_capacity(total);
    let mut max_alias_tokens = 0usize;
    for (alias, targets) in by_alias {
        let weights: HashMap<String, f64> = grams(&alias)
            .into_iter()
            .map(|(gram, tf)| {
                let idf = idf[&gram];
                (gram, tf as f64 * idf)
            })
            .collect();
        let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
        max_alias_tokens = max_alias_tokens.max(alias.split(' ').count());
        lookup.insert(alias, entries.len());
        entries.push(AliasEntry {
            targets: targets.into_iter().collect(),
            weights,
            norm,
        });
    }
    AliasIndex {
        entries,
        lookup,
        idf,
        max_alias_tokens,
    }
}

struct Token {
    start: usize,
    end: usize,
    folded: String,
}

/// Maximal alphanumeric runs with character offsets.
fn tokenize(text: &CharText) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < text.len() {
        if text.char_at(i).is_some_and(char::is_alphanumeric) {
            let start = i;
            while i < text.len() && text.char_at(i).is_some_and(char::is_alphanumeric) {
                i += 1;
            }
            let run = text
                .slice(Span::new(start, i).expect("run is non-empty"))
                .expect("run is in bounds");
            tokens.push(Token {
                start,
                end: i,
                folded: run.to_lowercase(),
            });
        } else {
            i += 1;
        }
    }
    tokens
}

/// The entity type for a detected mention: the alias's unique target type,
/// or the lexicographically smallest type name when the alias is shared by
/// vocabularies of several types.
fn entry_type(entry: &AliasEntry) -> EntityType {
    entry
        .targets
        .iter()
        .map(|(_, etype)| etype)
        .min_by(|a, b| a.name().cmp(b.name()))
        .cloned()
        .expect("an alias always has at least one target")
}

/// Finds exact alias matches in a document.
///
/// Scans tokens left to right; at each position the widest window (up to
/// `max_tokens` tokens, joined with single spaces after folding) that
/// exactly equals an alias wins, and scanning resumes after it, so the
/// result is non-overlapping. Detected mentions carry no identifiers.
pub fn detect(doc: &Document, index: &AliasIndex, max_tokens: usize) -> Vec<Mention> {
    let text = CharText::new(&doc.text);
    let tokens = tokenize(&text);
    let cap = max_tokens.min(index.max_alias_tokens).max(1);
    let mut mentions = Vec::new();
    let mut i = 0usize;
    while i < tokens.len() {
        let upper = cap.min(tokens.len() - i);
        let mut advanced = false;
        for width in (1..=upper).rev() {
            let key = tokens[i..i + width]
                .iter()
                .map(|t| t.folded.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            if let Some(&entry_index) = index.lookup.get(&key) {
                let entry = &index.entries[entry_index];
                let span = Span::new(tokens[i].start, tokens[i + width - 1].end)
                    .expect("token windows are non-empty");
                let surface = text.slice(span).expect("token window is in bounds");
                mentions.push(Mention::new(span, surface, entry_type(entry)));
                i += width;
                advanced = true;
                break;
            }
        }
        if !advanced {
            i += 1;
        }
    }
    mentions
}

/// Links free text to ranked identifier candidates.
///
/// An exact folded-alias hit short-circuits with similarity 1.0 for the
/// alias's identifiers. Otherwise every alias holding an identifier of the
/// requested type is scored by 3-gram TF-IDF cosine similarity; query
/// grams unknown to the index are skipped. Candidates below `tau` are
/// dropped; an identifier reachable through several aliases keeps its best
/// similarity. Results are ordered by similarity descending, ties by
/// identifier.
pub fn normalize(
    query: &str,
    index: &AliasIndex,
    etype: Option<&EntityType>,
    tau: f64,
) -> Vec<(EntityId, f64)> {
    let folded = fold(query);
    if folded.is_empty() {
        return Vec::new();
    }
    let type_ok =
        |target: &EntityType| etype.is_none_or(|wanted| wanted == target);
    if let Some(&entry_index) = index.lookup.get(&folded) {
        let ids: BTreeSet<&EntityId> = index.entries[entry_index]
            .targets
            .iter()
            .filter(|(_, t)| type_ok(t))
            .map(|(id, _)| id)
            .collect();
        if !ids.is_empty() {
            return ids.into_iter().map(|id| (id.clone(), 1.0)).collect();
        }
    }
    let mut query_weights: HashMap<String, f64> = HashMap::new();
    for (gram, tf) in grams(&folded) {
        if let Some(idf) = index.idf.get(&gram) {
            query_weights.insert(gram, tf as f64 * idf);
        }
    }
    let query_norm = query_weights.values().map(|w| w * w).sum::<f64>().sqrt();
    if query_norm == 0.0 {
        return Vec::new();
    }
    let mut best: BTreeMap<&EntityId, f64> = BTreeMap::new();
    for entry in &index.entries {
        if entry.norm == 0.0 || !entry.targets.iter().any(|(_, t)| type_ok(t)) {
            continue;
        }
        let dot: f64 = query_weights
            .iter()
            .filter_map(|(gram, qw)| entry.weights.get(gram).map(|aw| qw * aw))
            .sum();
        let similarity = dot / (query_norm * entry.norm);
        if similarity < tau {
            continue;
        }
        for (id, target_type) in &entry.targets {
            if type_ok(target_type) {
                best.entry(id)
                    .and_modify(|s| *s = s.max(similarity))
                    .or_insert(similarity);
            }
        }
    }
    let mut ranked: Vec<(EntityId, f64)> = best
        .into_iter()
        .map(|(id, sim)| (id.clone(), sim))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked
}

/// Where the mentions to link come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanSource {
    /// Detect spans with the alias dictionary.
    Dictionary,
    /// Reuse the gold layer's contiguous spans (normalization only).
    Gold,
}

/// Outcome counts of one linking run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LinkReport {
    /// Candidate mentions considered.
    pub detected: usize,
    /// Mentions that received an identifier.
    pub linked: usize,
    /// Candidates dropped because no identifier reached `tau`.
    pub dropped_unlinked: usize,
}

/// Detects (or copies gold) spans, normalizes each surface against the
/// index, and writes the linked mentions to tool layer `layer_name`. Each
/// linked mention carries the single best identifier; candidates that
/// normalize to nothing are dropped.
pub fn link_corpus(
    corpus: &Corpus,
    index: &AliasIndex,
    layer_name: &str,
    source: SpanSource,
    tau: f64,
    max_tokens: usize,
) -> Result<(Corpus, LinkReport)> {
    let mut linked = corpus.clone();
    let mut report = LinkReport::default();
    let sel = LayerSel::Tool(layer_name.to_string());
    for doc in &mut linked.documents {
        let candidates: Vec<Mention> = match source {
            SpanSource::Dictionary => detect(doc, index, max_tokens),
            SpanSource::Gold => doc
                .gold
                .iter()
                .filter(|m| !m.discontiguous)
                .map(|m| Mention::new(m.span, m.surface.clone(), m.etype.clone()))
                .collect(),
        };
        report.detected += candidates.len();
        let mut layer = Vec::new();
        for candidate in candidates {
            let ranked = normalize(&candidate.surface, index, Some(&candidate.etype), tau);
            match ranked.into_iter().next() {
                Some((id, _)) => {
                    layer.push(candidate.with_ids(vec![id]));
                    report.linked += 1;
                }
                None => report.dropped_unlinked += 1,
            }
        }
        *doc.layer_mut(&sel) = layer;
        doc.sort_layers();
    }
    Ok((linked, report))
}
