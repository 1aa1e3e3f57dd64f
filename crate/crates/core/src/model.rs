//! Shared document model: entity types, canonical identifiers, spans,
//! mentions, documents, and corpora.
//!
//! All offsets in this crate count Unicode scalar values (`char`s), not
//! bytes, so annotations survive non-ASCII text such as Greek letters and
//! micro signs that are common in biomedical abstracts.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reserved namespace for identifiers that arrive without one.
pub const UNKNOWN_NAMESPACE: &str = "UNKNOWN";

/// Entity classes understood by the harness.
///
/// Parsing is case-insensitive; serialization uses the canonical capitalized
/// name. Unrecognized classes are preserved as [`EntityType::Other`] with the
/// name normalized to first-letter capitalization so that parsing stays
/// case-insensitive for them as well.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityType {
    Chemical,
    Disease,
    Gene,
    Species,
    CellLine,
    Variant,
    Other(String),
}

impl EntityType {
    /// Parses a type name. Never fails: unknown names become
    /// [`EntityType::Other`].
    pub fn parse(name: &str) -> EntityType {
        let trimmed = name.trim();
        match trimmed.to_ascii_lowercase().as_str() {
            "chemical" => EntityType::Chemical,
            "disease" => EntityType::Disease,
            "gene" => EntityType::Gene,
            "species" => EntityType::Species,
            "cellline" | "cell line" | "cell_line" => EntityType::CellLine,
            "variant" => EntityType::Variant,
            _ => EntityType::Other(capitalize(trimmed)),
        }
    }

    /// Canonical display name.
    pub fn name(&self) -> &str {
        match self {
            EntityType::Chemical => "Chemical",
            EntityType::Disease => "Disease",
            EntityType::Gene => "Gene",
            EntityType::Species => "Species",
            EntityType::CellLine => "CellLine",
            EntityType::Variant => "Variant",
            EntityType::Other(name) => name,
        }
    }
}

fn capitalize(value: &str) -> String {
    let mut chars = value.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + &chars.as_str().to_lowercase(),
        None => String::new(),
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for EntityType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EntityType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Ok(EntityType::parse(&name))
    }
}

/// A canonical knowledge-base identifier: `(namespace, local id)`.
///
/// Construction goes through [`canonicalize_id`] or [`EntityId::from_parts`],
/// which normalize case, spelling variants of the namespace, and bare
/// identifiers, so two textual variants of the same identifier compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    namespace: String,
    local: String,
}

impl EntityId {
    /// Builds a canonical identifier from separate namespace and local parts
    /// (e.g. from interchange JSON `normalized` entries).
    pub fn from_parts(namespace: &str, local: &str) -> Result<EntityId> {
        let local = canonical_local(local);
        if local.is_empty() {
            return Err(Error::MalformedIdentifier(format!("{namespace}:{local}")));
        }
        Ok(EntityId {
            namespace: canonical_namespace(namespace),
            local,
        })
    }

    /// The canonical (uppercased, alias-folded) namespace.
    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    /// The canonical local identifier.
    pub fn local(&self) -> &str {
        &self.local
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.namespace, self.local)
    }
}

impl Serialize for EntityId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        canonicalize_id(&raw).map_err(serde::de::Error::custom)
    }
}

fn canonical_namespace(raw: &str) -> String {
    let mut upper = raw.trim().to_uppercase();
    // Collapse internal whitespace runs so "NCBI  taxon" folds like
    // "NCBI taxon".
    upper = upper.split_whitespace().collect::<Vec<_>>().join(" ");
    let folded = match upper.as_str() {
        "" => UNKNOWN_NAMESPACE,
        "NCBI TAXON" | "NCBITAXON" => "NCBITAXON",
        "NCBI GENE" | "NCBIGENE" => "NCBIGENE",
        other => other,
    };
    folded.to_string()
}

/// Uppercases the maximal leading alphabetic run of the local id, so
/// `d009369` and `D009369` canonicalize identically, and trims whitespace.
fn canonical_local(raw: &str) -> String {
    let trimmed = raw.trim();
    let prefix_len = trimmed
        .char_indices()
        .take_while(|(_, c)| c.is_ascii_alphabetic())
        .map(|(i, c)| i + c.len_utf8())
        .last()
        .unwrap_or(0);
    let (prefix, rest) = trimmed.split_at(prefix_len);
    prefix.to_ascii_uppercase() + rest
}

/// Canonicalizes a raw identifier string into an [`EntityId`].
///
/// The first `:` separates the namespace from the local id; a bare id (no
/// colon) is assigned the [`UNKNOWN_NAMESPACE`]. Namespaces are uppercased,
/// trimmed, and folded across known spelling variants (`NCBI taxon` →
/// `NCBITAXON`, `ncbigene`/`NCBI Gene` → `NCBIGENE`). The function is
/// idempotent over its own output: re-canonicalizing a rendered canonical id
/// yields the same value.
pub fn canonicalize_id(raw: &str) -> Result<EntityId> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::MalformedIdentifier(raw.to_string()));
    }
    match trimmed.split_once(':') {
        Some((namespace, local)) => EntityId::from_parts(namespace, local),
        None => EntityId::from_parts(UNKNOWN_NAMESPACE, trimmed),
    }
}

/// Splits a composite identifier field on `;` and `,`, canonicalizes each
/// part, and drops empty parts, unparseable parts, and duplicates while
/// preserving first-occurrence order. An empty result is allowed when every
/// part is empty.
pub fn split_composite_ids(raw: &str) -> Vec<EntityId> {
    let mut out: Vec<EntityId> = Vec::new();
    for part in raw.split([';', ',']) {
        if part.trim().is_empty() {
            continue;
        }
        if let Ok(id) = canonicalize_id(part) {
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}

/// A half-open character range `[start, end)` into a document's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    /// Creates a span, rejecting empty or inverted ranges.
    pub fn new(start: usize, end: usize) -> Result<Span> {
        if start >= end {
            return Err(Error::InvalidSpan { start, end });
        }
        Ok(Span { start, end })
    }

    /// Number of characters covered.
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    /// Spans are never empty by construction.
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A single annotated mention of an entity in a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub span: Span,
    /// Surface text as annotated. Matches the document slice at `span`
    /// unless ingest recorded a mismatch warning.
    pub surface: String,
    pub etype: EntityType,
    /// Canonical identifiers, first-occurrence order, no duplicates. Empty
    /// for recognition-only layers.
    pub ids: Vec<EntityId>,
    /// True when the original annotation covered multiple discontiguous
    /// ranges; `span` is then the covering envelope. Discontiguous mentions
    /// are excluded from evaluation by [`crate::ingest::filter_eligible`].
    pub discontiguous: bool,
}

impl Mention {
    pub fn new(span: Span, surface: impl Into<String>, etype: EntityType) -> Mention {
        Mention {
            span,
            surface: surface.into(),
            etype,
            ids: Vec::new(),
            discontiguous: false,
        }
    }

    pub fn with_ids(mut self, ids: Vec<EntityId>) -> Mention {
        self.ids = ids;
        self
    }

    /// Sort key giving a total order: `(start, end)`, ties broken by entity
    /// type name, then by first identifier.
    pub fn sort_key(&self) -> (usize, usize, String, String) {
        (
            self.span.start,
            self.span.end,
            self.etype.name().to_string(),
            self.ids.first().map(|id| id.to_string()).unwrap_or_default(),
        )
    }
}

/// Compares two mentions by their canonical sort key.
pub fn mention_order(a: &Mention, b: &Mention) -> Ordering {
    a.sort_key().cmp(&b.sort_key())
}

/// Returns true when `mentions` is sorted by [`mention_order`].
pub fn mentions_sorted(mentions: &[Mention]) -> bool {
    mentions.windows(2).all(|w| mention_order(&w[0], &w[1]) != Ordering::Greater)
}

/// A contiguous region of the document text with a declared kind
/// (`title`, `abstract`, `caption`, ...). Offsets and lengths count chars.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub kind: String,
    pub offset: usize,
    pub length: usize,
}

/// Identifies which annotation layer of a document an operation reads or
/// writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSel {
    /// The reference annotations.
    Gold,
    /// A named prediction layer (tool output).
    Tool(String),
}

impl LayerSel {
    /// Parses a selector; the reserved name `gold` (case-insensitive) selects
    /// the reference layer.
    pub fn parse(name: &str) -> LayerSel {
        if name.eq_ignore_ascii_case("gold") {
            LayerSel::Gold
        } else {
            LayerSel::Tool(name.to_string())
        }
    }
}

impl fmt::Display for LayerSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSel::Gold => f.write_str("gold"),
            LayerSel::Tool(name) => f.write_str(name),
        }
    }
}

/// A single document: identifier, full text, passage map, reference
/// annotations, and any number of named prediction layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub passages: Vec<Passage>,
    pub gold: Vec<Mention>,
    /// Tool name → predicted mentions. A `BTreeMap` keeps iteration (and
    /// therefore all derived output) deterministic.
    pub layers: BTreeMap<String, Vec<Mention>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Document {
        Document {
            doc_id: doc_id.into(),
            text: text.into(),
            passages: Vec::new(),
            gold: Vec::new(),
            layers: BTreeMap::new(),
        }
    }

    /// Immutable view of a layer's mentions.
    pub fn layer(&self, sel: &LayerSel) -> Option<&[Mention]> {
        match sel {
            LayerSel::Gold => Some(&self.gold),
            LayerSel::Tool(name) => self.layers.get(name).map(|v| v.as_slice()),
        }
    }

    /// Mutable handle to a layer, creating tool layers on demand.
    pub fn layer_mut(&mut self, sel: &LayerSel) -> &mut Vec<Mention> {
        match sel {
            LayerSel::Gold => &mut self.gold,
            LayerSel::Tool(name) => self.layers.entry(name.clone()).or_default(),
        }
    }

    /// Sorts every layer by the canonical mention order.
    pub fn sort_layers(&mut self) {
        self.gold.sort_by(mention_order);
        for mentions in self.layers.values_mut() {
            mentions.sort_by(mention_order);
        }
    }

    /// Checks the document invariants: every mention span within text
    /// bounds and every layer sorted. Returns the first violation found.
    pub fn check_invariants(&self) -> Result<()> {
        let len = self.text.chars().count();
        let layers = std::iter::once(&self.gold).chain(self.layers.values());
        for mentions in layers {
            for mention in mentions {
                if mention.span.end > len {
                    return Err(Error::SpanOutOfBounds {
                        doc_id: self.doc_id.clone(),
                        start: mention.span.start,
                        end: mention.span.end,
                        len,
                    });
                }
            }
            if !mentions_sorted(mentions) {
                return Err(Error::Contract(format!(
                    "mentions of document {} are not sorted",
                    self.doc_id
                )));
            }
        }
        Ok(())
    }
}

/// A named collection of documents with unique identifiers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub documents: Vec<Document>,
    /// Expected knowledge-base namespace per entity type, when known.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kb_per_type: BTreeMap<EntityType, String>,
}

impl Corpus {
    pub fn new(name: impl Into<String>) -> Corpus {
        Corpus {
            name: name.into(),
            documents: Vec::new(),
            kb_per_type: BTreeMap::new(),
        }
    }

    /// Names of the prediction layers present anywhere in the corpus,
    /// sorted and deduplicated.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .documents
            .iter()
            .flat_map(|d| d.layers.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Returns an error unless `sel` is the gold layer or a tool layer that
    /// exists in at least one document.
    pub fn require_layer(&self, sel: &LayerSel) -> Result<()> {
        match sel {
            LayerSel::Gold => Ok(()),
            LayerSel::Tool(name) => {
                if self.documents.iter().any(|d| d.layers.contains_key(name)) {
                    Ok(())
                } else {
                    Err(Error::UnknownLayer(name.clone()))
                }
            }
        }
    }
}

/// Random-access view over a string by character offset.
///
/// Built once per document to keep repeated span slicing linear in slice
/// length instead of in document length.
#[derive(Debug, Clone)]
pub struct CharText {
    chars: Vec<char>,
}

impl CharText {
    pub fn new(text: &str) -> CharText {
        CharText {
            chars: text.chars().collect(),
        }
    }

    /// Number of characters in the text.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// The slice covered by `span`, or `None` if out of bounds.
    pub fn slice(&self, span: Span) -> Option<String> {
        self.chars
            .get(span.start..span.end)
            .map(|cs| cs.iter().collect())
    }

    /// Character at `index`.
    pub fn char_at(&self, index: usize) -> Option<char> {
        self.chars.get(index).copied()
    }
}
