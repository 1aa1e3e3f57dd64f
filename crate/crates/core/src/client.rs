//! Remote annotation fetching with caching, rate limiting, and retries.
//!
//! [`fetch_annotations`] posts each document's text to an annotation
//! service (`POST <base>/annotate`, plain text in, single-document
//! annotation payload out) and stores the returned mentions as a tool
//! layer. Successful payloads are cached on disk keyed by document id and
//! text, so reruns touch the network only for new or changed documents.
//! Transient failures (HTTP 5xx, timeouts, transport errors) retry with
//! jittered exponential backoff; HTTP 4xx is permanent. The [`stub`]
//! submodule provides a scripted in-process server for tests.

pub mod stub;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ingest::{parse_pubtator, ParseOptions};
use crate::model::{Corpus, LayerSel, Mention};
use crate::{Error, Result};

/// Environment variable consulted for the cache directory when
/// [`FetchConfig::cache_dir`] is unset.
pub const CACHE_DIR_ENV: &str = "XCE_CACHE_DIR";

/// Connection and policy settings for [`fetch_annotations`].
#[derive(Debug, Clone)]
pub struct FetchConfig {
    /// Service root; requests go to `<base_url>/annotate`.
    pub base_url: String,
    /// Maximum requests per second across all workers; 0 disables the
    /// limiter.
    pub rate_per_sec: f64,
    /// Maximum in-flight requests.
    pub concurrency: usize,
    /// Additional attempts after the first for retryable failures.
    pub retries: u32,
    pub timeout_ms: u64,
    /// First backoff pause; attempt `n` waits `base * 2^n` plus jitter.
    pub backoff_base_ms: u64,
    /// Payload cache directory; falls back to `XCE_CACHE_DIR`, then to no
    /// caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for FetchConfig {
    fn default() -> FetchConfig {
        FetchConfig {
            base_url: String::new(),
            rate_per_sec: 3.0,
            concurrency: 2,
            retries: 3,
            timeout_ms: 30_000,
            backoff_base_ms: 250,
            cache_dir: None,
        }
    }
}

impl FetchConfig {
    fn resolved_cache_dir(&self) -> Option<PathBuf> {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
    }
}

/// One document that could not be annotated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FetchFailure {
    pub doc_id: String,
    pub reason: String,
}

/// Outcome counts of one fetch run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FetchReport {
    pub requested: usize,
    /// Documents annotated over the network.
    pub fetched: usize,
    /// Documents served from the payload cache.
    pub cache_hits: usize,
    /// Retry attempts across all documents.
    pub retries: u64,
    pub failed: Vec<FetchFailure>,
    pub warnings: Vec<String>,
}

/// Cache key: SHA-256 over the document id and text.
pub fn cache_key(doc_id: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(doc_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut key = String::with_capacity(digest.len() * 2);
    for byte in digest {
        key.push_str(&format!("{byte:02x}"));
    }
    key
}

/// Spaces request starts so the global rate stays at or under the cap.
struct RateLimiter {
    interval: Duration,
    next_start: Mutex<Instant>,
}

impl RateLimiter {
    fn new(rate_per_sec: f64) -> Option<RateLimiter> {
        if rate_per_sec <= 0.0 {
            return None;
        }
        Some(RateLimiter {
            interval: Duration::from_secs_f64(1.0 / rate_per_sec),
            next_start: Mutex::new(Instant::now()),
        })
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next_start.lock().expect("limiter lock");
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + self.interval;
            start.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

enum DocOutcome {
    Fetched(Vec<Mention>),
    Cached(Vec<Mention>),
    Failed(String),
}

/// Annotates every document of the corpus into tool layer `layer_name`.
///
/// Documents are processed by up to `concurrency` workers; annotations are
/// attached in document order regardless of completion order, so the
/// result is deterministic. Per-document failures are recorded in the
/// report rather than aborting the run.
pub fn fetch_annotations(
    corpus: &mut Corpus,
    layer_name: &str,
    config: &FetchConfig,
) -> Result<FetchReport> {
    if matches!(LayerSel::parse(layer_name), LayerSel::Gold) {
        return Err(Error::Contract(
            "fetched annotations cannot overwrite the gold layer".into(),
        ));
    }
    let cache_dir = config.resolved_cache_dir();
    if let Some(dir) = &cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let http = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(config.timeout_ms))
        .build()
        .map_err(|e| Error::Fetch {
            doc_id: String::new(),
            message: format!("failed to build HTTP client: {e}"),
        })?;
    let limiter = RateLimiter::new(config.rate_per_sec);
    let url = format!("{}/annotate", config.base_url.trim_end_matches('/'));

    let jobs: Vec<(String, String)> = corpus
        .documents
        .iter()
        .map(|doc| (doc.doc_id.clone(), doc.text.clone()))
        .collect();
    let mut report = FetchReport {
        requested: jobs.len(),
        ..FetchReport::default()
    };
    let next_job = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<DocOutcome>>> =
        Mutex::new(jobs.iter().map(|_| None).collect());
    let retries_total = AtomicUsize::new(0);
    let warnings: Mutex<Vec<String>> = Mutex::new(Vec::new());

    let workers = config.concurrency.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next_job.fetch_add(1, Ordering::SeqCst);
                if index >= jobs.len() {
                    break;
                }
                let (doc_id, text) = &jobs[index];
                let mut doc_warnings = Vec::new();
                let outcome = fetch_one(
                    &http,
                    &url,
                    config,
                    limiter.as_ref(),
                    cache_dir.as_deref(),
                    doc_id,
                    text,
                    &retries_total,
                    &mut doc_warnings,
                );
                outcomes.lock().expect("outcome lock")[index] = Some(outcome);
                if !doc_warnings.is_empty() {
                    warnings.lock().expect("warning lock").extend(doc_warnings);
                }
            });
        }
    });

    report.retries = retries_total.load(Ordering::SeqCst) as u64;
    report.warnings = warnings.into_inner().expect("warning lock");
    let outcomes = outcomes.into_inner().expect("outcome lock");
    let sel = LayerSel::Tool(layer_name.to_string());
    for (doc, outcome) in corpus.documents.iter_mut().zip(outcomes) {
        // Every document gets the layer, so the corpus stays serializable
        // even when annotation failed; failed documents keep it empty.
        let layer = doc.layer_mut(&sel);
        match outcome.expect("every job ran") {
            DocOutcome::Fetched(mentions) => {
                report.fetched += 1;
                *layer = mentions;
                doc.sort_layers();
            }
            DocOutcome::Cached(mentions) => {
                report.cache_hits += 1;
                *layer = mentions;
                doc.sort_layers();
            }
            DocOutcome::Failed(reason) => report.failed.push(FetchFailure {
                doc_id: doc.doc_id.clone(),
                reason,
            }),
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn fetch_one(
    http: &reqwest::blocking::Client,
    url: &str,
    config: &FetchConfig,
    limiter: Option<&RateLimiter>,
    cache_dir: Option<&std::path::Path>,
    doc_id: &str,
    text: &str,
    retries_total: &AtomicUsize,
    warnings: &mut Vec<String>,
) -> DocOutcome {
    let cache_path =
        cache_dir.map(|dir| dir.join(format!("{}.pubtator", cache_key(doc_id, text))));
    if let Some(path) = &cache_path {
        if let Ok(payload) = std::fs::read_to_string(path) {
            match parse_payload(&payload, doc_id, text, warnings) {
                Ok(mentions) => return DocOutcome::Cached(mentions),
                Err(reason) => warnings.push(format!(
                    "{doc_id}: discarding unreadable cache entry ({reason})"
                )),
            }
        }
    }

    let mut attempt = 0u32;
    loop {
        if let Some(limiter) = limiter {
            limiter.acquire();
        }
        let result = http
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "text/plain")
            .body(text.to_string())
            .send();
        let retryable_reason = match result {
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    let payload = match response.text() {
                        Ok(payload) => payload,
                        Err(e) => return DocOutcome::Failed(format!("unreadable response: {e}")),
                    };
                    return match parse_payload(&payload, doc_id, text, warnings) {
                        Ok(mentions) => {
                            if let Some(path) = &cache_path {
                                if let Err(e) = std::fs::write(path, &payload) {
                                    warnings.push(format!(
                                        "{doc_id}: failed to write cache entry: {e}"
                                    ));
                                }
                            }
                            DocOutcome::Fetched(mentions)
                        }
                        Err(reason) => DocOutcome::Failed(reason),
                    };
                }
                if status.is_server_error() {
                    format!("HTTP {status}")
                } else {
                    // 4xx and other statuses are permanent.
                    return DocOutcome::Failed(format!("HTTP {status}"));
                }
            }
            // Timeouts and transport errors are transient.
            Err(e) => format!("request failed: {e}"),
        };
        if attempt >= config.retries {
            return DocOutcome::Failed(retryable_reason);
        }
        retries_total.fetch_add(1, Ordering::SeqCst);
        let base = config.backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
        if base > 0 {
            let jitter = rand::rng().random_range(0..=base / 2);
            std::thread::sleep(Duration::from_millis(base + jitter));
        }
        attempt += 1;
    }
}

/// Parses an annotation payload and validates it against the document the
/// request was made for. Out-of-bounds annotations are dropped with a
/// warning; an unparseable payload is a per-document failure.
fn parse_payload(
    payload: &str,
    doc_id: &str,
    text: &str,
    warnings: &mut Vec<String>,
) -> std::result::Result<Vec<Mention>, String> {
    let opts = ParseOptions {
        strict: true,
        ..ParseOptions::default()
    };
    let (parsed, parse_report) =
        parse_pubtator(payload, &LayerSel::Gold, &opts).map_err(|e| format!("{e}"))?;
    for warning in parse_report.warnings {
        warnings.push(format!("{doc_id}: payload: {}", warning.message));
    }
    let Some(first) = parsed.documents.into_iter().next() else {
        warnings.push(format!("{doc_id}: payload contained no document"));
        return Ok(Vec::new());
    };
    let text_len = text.chars().count();
    let mut mentions = Vec::new();
    for mention in first.gold {
        if mention.span.end > text_len {
            warnings.push(format!(
                "{doc_id}: dropped annotation {}..{} beyond text end {}",
                mention.span.start, mention.span.end, text_len
            ));
            continue;
        }
        mentions.push(mention);
    }
    Ok(mentions)
}
