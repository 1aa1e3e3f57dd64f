//! Cross-reference identifier mapping.
//!
//! A [`MappingTable`] combines a many-to-many xref relation between
//! knowledge-base identifiers with one or more named target vocabularies,
//! each carrying an entity type. [`map_layer`] rewrites a corpus layer so
//! that every mention carries only identifiers from the target
//! vocabularies, rewriting entity types to match the vocabulary and
//! dropping mentions that cannot be mapped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::model::{canonicalize_id, Corpus, EntityId, EntityType, LayerSel, Mention};
use crate::{Error, Result};

/// One vocabulary entry: an identifier with an optional preferred name and
/// synonyms. The names are unused for mapping but feed the dictionary
/// linker, which shares the vocabulary file format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub id: EntityId,
    pub name: Option<String>,
    pub synonyms: Vec<String>,
}

/// A named set of identifiers of one entity type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub name: String,
    pub etype: EntityType,
    pub entries: Vec<VocabEntry>,
    members: BTreeSet<EntityId>,
}

impl Vocabulary {
    pub fn new(name: impl Into<String>, etype: EntityType) -> Vocabulary {
        Vocabulary {
            name: name.into(),
            etype,
            entries: Vec::new(),
            members: BTreeSet::new(),
        }
    }

    pub fn push(&mut self, entry: VocabEntry) {
        self.members.insert(entry.id.clone());
        self.entries.push(entry);
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.members.contains(id)
    }
}

/// Row and skip counts from loading mapping inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    /// Distinct xref pairs loaded (duplicates collapse).
    pub xref_rows: usize,
    /// Duplicate xref rows that were collapsed.
    pub xref_duplicates: usize,
    /// Vocabulary entries loaded across all files.
    pub vocab_entries: usize,
    /// Rows skipped because they could not be parsed.
    pub skipped_malformed: usize,
}

/// Xref relation plus target vocabularies.
#[derive(Debug, Clone, Default)]
pub struct MappingTable {
    xref: BTreeMap<EntityId, BTreeSet<EntityId>>,
    vocabularies: BTreeMap<String, Vocabulary>,
}

impl MappingTable {
    /// Adds one source → target cross-reference. Returns false when the
    /// pair was already present.
    pub fn add_xref(&mut self, source: EntityId, target: EntityId) -> bool {
        self.xref.entry(source).or_default().insert(target)
    }

    pub fn add_vocabulary(&mut self, vocabulary: Vocabulary) {
        self.vocabularies.insert(vocabulary.name.clone(), vocabulary);
    }

    pub fn vocabulary(&self, name: &str) -> Option<&Vocabulary> {
        self.vocabularies.get(name)
    }

    pub fn vocabularies(&self) -> impl Iterator<Item = &Vocabulary> {
        self.vocabularies.values()
    }

    /// Images of `id` under the xref relation (sorted, possibly empty).
    pub fn images(&self, id: &EntityId) -> impl Iterator<Item = &EntityId> {
        self.xref.get(id).into_iter().flatten()
    }

    pub fn has_xrefs(&self) -> bool {
        !self.xref.is_empty()
    }
}

/// Parses xref TSV content: one `source<TAB>target` pair per row, columns
/// beyond the second ignored, `#` comments and blank lines skipped.
/// Malformed rows are counted and skipped.
pub fn parse_xref_tsv(content: &str, table: &mut MappingTable, report: &mut LoadReport) {
    for line in content.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let source = fields.next().unwrap_or("");
        let target = match fields.next() {
            Some(t) => t,
            None => {
                report.skipped_malformed += 1;
                continue;
            }
        };
        match (canonicalize_id(source), canonicalize_id(target)) {
            (Ok(source), Ok(target)) => {
                if table.add_xref(source, target) {
                    report.xref_rows += 1;
                } else {
                    report.xref_duplicates += 1;
                }
            }
            _ => report.skipped_malformed += 1,
        }
    }
}

/// Parses vocabulary TSV content: `id<TAB>name<TAB>syn1|syn2|...` with the
/// name and synonym columns optional.
pub fn parse_vocab_tsv(
    name: &str,
    etype: EntityType,
    content: &str,
    report: &mut LoadReport,
) -> Vocabulary {
    let mut vocabulary = Vocabulary::new(name, etype);
    for line in content.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let id = match canonicalize_id(fields[0]) {
            Ok(id) => id,
            Err(_) => {
                report.skipped_malformed += 1;
                continue;
            }
        };
        let entry_name = fields
            .get(1)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let synonyms: Vec<String> = fields
            .get(2)
            .map(|s| {
                s.split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        vocabulary.push(VocabEntry {
            id,
            name: entry_name,
            synonyms,
        });
        report.vocab_entries += 1;
    }
    vocabulary
}

/// A vocabulary file to load: name, entity type, and path.
#[derive(Debug, Clone)]
pub struct VocabSpec {
    pub name: String,
    pub etype: EntityType,
    pub path: std::path::PathBuf,
}

/// Loads xref and vocabulary files into a [`MappingTable`]. Unreadable
/// files are fatal; malformed rows are skipped and counted.
pub fn load_mapping(
    xref_paths: &[std::path::PathBuf],
    vocabs: &[VocabSpec],
) -> Result<(MappingTable, LoadReport)> {
    let mut table = MappingTable::default();
    let mut report = LoadReport::default();
    let read = |path: &Path| -> Result<String> {
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
    };
    for path in xref_paths {
        let content = read(path)?;
        parse_xref_tsv(&content, &mut table, &mut report);
    }
    for spec in vocabs {
        let content = read(&spec.path)?;
        let vocabulary = parse_vocab_tsv(&spec.name, spec.etype.clone(), &content, &mut report);
        table.add_vocabulary(vocabulary);
    }
    Ok((table, report))
}

/// Mapping configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct MapOptions {
    /// Keep only the first (smallest) surviving image per source
    /// identifier instead of carrying all images as a composite.
    pub first_image_only: bool,
}

/// Outcome counts of one mapping run. The counts reconcile:
/// `output_mentions == input_mentions - dropped_unmapped + duplicated_extra`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MapReport {
    pub input_mentions: usize,
    pub output_mentions: usize,
    /// Mentions dropped because no identifier reached a target vocabulary.
    pub dropped_unmapped: usize,
    /// Mentions whose identifiers reached vocabularies of two or more
    /// entity types and were emitted once per type.
    pub ambiguous: usize,
    /// Extra mention copies created by ambiguous duplication.
    pub duplicated_extra: usize,
}

/// Rewrites the identifiers of one corpus layer into the target
/// vocabularies.
///
/// For every identifier of every mention: identifiers that are already
/// members of a target vocabulary pass through unchanged; otherwise the
/// xref images that are members of a target vocabulary replace it (all of
/// them, as a composite, unless [`MapOptions::first_image_only`]). The
/// mention's entity type is rewritten to the type of the vocabulary its
/// surviving identifiers belong to. When the surviving identifiers belong
/// to vocabularies of several types, a mention whose current type is one of
/// them keeps that type (which makes mapping idempotent); otherwise the
/// mention is duplicated, one copy per type, and counted as ambiguous.
/// Mentions with no surviving identifier are dropped.
pub fn map_layer(
    corpus: &Corpus,
    layer: &LayerSel,
    table: &MappingTable,
    targets: &[String],
    opts: &MapOptions,
) -> Result<(Corpus, MapReport)> {
    corpus.require_layer(layer)?;
    let target_vocabs: Vec<&Vocabulary> = targets
        .iter()
        .map(|name| {
            table
                .vocabulary(name)
                .ok_or_else(|| Error::Contract(format!("unknown target vocabulary {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = MapReport::default();
    let mut mapped = corpus.clone();
    for doc in &mut mapped.documents {
        let mentions = std::mem::take(doc.layer_mut(layer));
        let mut rewritten: Vec<Mention> = Vec::new();
        for mention in mentions {
            report.input_mentions += 1;
            // Type → identifiers that survive into that type's vocabularies,
            // first-occurrence order per type.
            let mut buckets: BTreeMap<EntityType, Vec<EntityId>> = BTreeMap::new();
            let mut push = |etype: &EntityType, id: &EntityId| {
                let bucket = buckets.entry(etype.clone()).or_default();
                if !bucket.contains(id) {
                    bucket.push(id.clone());
                }
            };
            for id in &mention.ids {
                let direct: Vec<&Vocabulary> = target_vocabs
                    .iter()
                    .copied()
                    .filter(|v| v.contains(id))
                    .collect();
                if !direct.is_empty() {
                    for vocabulary in direct {
                        push(&vocabulary.etype, id);
                    }
                    continue;
                }
                let mut images_used = 0;
                for image in table.images(id) {
                    let holders: Vec<&Vocabulary> = target_vocabs
                        .iter()
                        .copied()
                        .filter(|v| v.contains(image))
                        .collect();
                    if holders.is_empty() {
                        continue;
                    }
                    for vocabulary in holders {
                        push(&vocabulary.etype, image);
                    }
                    images_used += 1;
                    if opts.first_image_only && images_used == 1 {
                        break;
                    }
                }
            }

            if buckets.is_empty() {
                report.dropped_unmapped += 1;
                continue;
            }
            if buckets.len() > 1 && buckets.contains_key(&mention.etype) {
                let ids = buckets.remove(&mention.etype).expect("checked key");
                rewritten.push(Mention {
                    ids,
                    ..mention.clone()
                });
                report.output_mentions += 1;
                continue;
            }
            if buckets.len() > 1 {
                report.ambiguous += 1;
                report.duplicated_extra += buckets.len() - 1;
            }
            for (etype, ids) in buckets {
                rewritten.push(Mention {
                    etype,
                    ids,
                    ..mention.clone()
                });
                report.output_mentions += 1;
            }
        }
        *doc.layer_mut(layer) = rewritten;
        doc.sort_layers();
    }
    Ok((mapped, report))
}
