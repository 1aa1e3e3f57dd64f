//! Core library for cross-corpus evaluation of biomedical entity extraction
//! and normalization systems.
//!
//! The crate is organized around a small document model ([`model`]) shared by
//! every stage of the pipeline:
//!
//! * [`ingest`] — reading and writing annotated corpora (PubTator blocks and
//!   newline-delimited interchange JSON), plus eligibility filtering.
//! * [`idmap`] — cross-reference tables that rewrite knowledge-base
//!   identifiers into target vocabularies.
//! * [`matching`] — span/identifier predicates and the greedy gold-to-
//!   prediction aligner.
//! * [`metrics`] — mention-level, document-level, and per-entity (macro)
//!   precision/recall/F1, plus cross-corpus averaging.
//! * [`analysis`] — agreement analysis across tools, entity frequency
//!   distributions, and sentence-level corpus overlap.
//! * [`linker`] — a dictionary + character-trigram baseline normalizer.
//! * [`client`] — a caching, rate-limited HTTP client for remote annotators.
//! * [`report`] — table rendering (TSV, Markdown, LaTeX, JSON) over metric
//!   records.

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod analysis;
pub mod client;
pub mod idmap;
pub mod ingest;
pub mod linker;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod report;

use thiserror::Error;

/// Errors produced by the evaluation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An identifier string that cannot be canonicalized (empty or blank).
    #[error("malformed identifier: {0:?}")]
    MalformedIdentifier(String),

    /// A span whose end does not lie strictly after its start.
    #[error("invalid span {start}..{end}: end must be greater than start")]
    InvalidSpan { start: usize, end: usize },

    /// A mention whose span exceeds the bounds of its document text.
    #[error("mention span {start}..{end} exceeds text length {len} in document {doc_id}")]
    SpanOutOfBounds {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    /// Input that violates a format contract fatally (strict mode, or a
    /// structurally unreadable file).
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A JSON document that does not satisfy the interchange schema.
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    /// A caller violated an operation precondition (e.g. unsorted input).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A layer name that does not exist in the corpus.
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),

    /// An operation that requires at least one input row received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Failure reading or writing a file.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A remote annotation request that failed permanently.
    #[error("fetch failed for document {doc_id}: {message}")]
    Fetch { doc_id: String, message: String },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an I/O error with the path that produced it.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
