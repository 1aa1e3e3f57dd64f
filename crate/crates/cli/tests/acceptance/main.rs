//! Acceptance harness.
//!
//! Each test exercises one shipped guarantee end to end and prints a
//! single `ACCEPT Cn <title>: PASS/FAIL` line (visible with
//! `--nocapture`, and in the failure output otherwise). Expected values
//! come from frozen reference scores, from the brute-force oracles in
//! [`oracle`], or from hand-derived literals — never from the code under
//! test.


use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use xce_core::analysis;
use xce_core::client::stub::{StubResponse, StubServer};
use xce_core::client::{fetch_annotations, FetchConfig};
use xce_core::idmap::{self, LoadReport, MapOptions, MappingTable};
use xce_core::ingest::{self, ParseOptions};
use xce_core::matching::{align, AlignOptions, MatchMode, Slack};
use xce_core::metrics::{
    self, cross_corpus_average, harmonic_f1, percent, round2, Level, MetricRecord, Score, Tally,
};
use xce_core::model::{canonicalize_id, Corpus, Document, EntityId, EntityType, LayerSel, Mention};
use xce_core::report::{build_table, render_table, MetricChoice, ReportFormat, ReportSpec};
use xce_core::Error;

/// Collects named checks for one acceptance test and prints its verdict.
struct Checker {
    criterion: &'static str,
    title: &'static str,
    checks: usize,
    failures: Vec<String>,
}

impl Checker {
    fn new(criterion: &'static str, title: &'static str) -> Checker {
        Checker { criterion, title, checks: 0, failures: Vec::new() }
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.checks += 1;
        if !ok {
            self.failures.push(format!("{name}: {detail}"));
        }
    }

    fn finish(self) {
        if self.failures.is_empty() {
            println!(
                "ACCEPT {} {}: PASS ({} checks)",
                self.criterion, self.title, self.checks
            );
        } else {
            println!(
                "ACCEPT {} {}: FAIL ({} of {} checks failed)",
                self.criterion,
                self.title,
                self.failures.len(),
                self.checks
            );
            panic!(
                "{} {}: {} of {} checks failed:\n  {}",
                self.criterion,
                self.title,
                self.failures.len(),
                self.checks,
                self.failures.join("\n  ")
            );
        }
    }
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol + 1e-9
}

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

// ---------------------------------------------------------------------------
// Frozen reference scores: five tools evaluated on four corpus/type slices,
// mention level (percentages), plus the per-tool cross-corpus average row.
// ---------------------------------------------------------------------------

/// `(entity type, corpus, tool, precision, recall, f1)`.
const MENTION_ROWS: &[(&str, &str, &str, f64, f64, f64)] = &[
    ("Chemical", "MedMentions", "bern2", 48.08, 36.95, 41.79),
    ("Chemical", "MedMentions", "pubtator", 39.81, 25.77, 31.28),
    ("Chemical", "MedMentions", "scispacy", 41.40, 30.24, 34.95),
    ("Chemical", "MedMentions", "bent", 46.76, 36.35, 40.90),
    ("Chemical", "MedMentions", "hunflair2", 52.32, 50.08, 51.17),
    ("Disease", "MedMentions", "bern2", 43.09, 52.51, 47.33),
    ("Disease", "MedMentions", "pubtator", 40.33, 41.93, 41.11),
    ("Disease", "MedMentions", "scispacy", 38.38, 43.49, 40.78),
    ("Disease", "MedMentions", "bent", 41.27, 51.81, 45.94),
    ("Disease", "MedMentions", "hunflair2", 50.78, 66.45, 57.57),
    ("Gene", "tmVar (v3)", "bern2", 40.37, 48.26, 43.96),
    ("Gene", "tmVar (v3)", "pubtator", 90.33, 82.11, 86.02),
    ("Gene", "tmVar (v3)", "bent", 0.52, 0.57, 0.54),
    ("Gene", "tmVar (v3)", "hunflair2", 74.58, 79.06, 76.75),
    ("Species", "BioID", "bern2", 17.93, 11.96, 14.35),
    ("Species", "BioID", "pubtator", 81.52, 46.11, 58.90),
    ("Species", "BioID", "scispacy", 50.66, 29.31, 37.14),
    ("Species", "BioID", "bent", 11.79, 9.22, 10.35),
    ("Species", "BioID", "hunflair2", 65.94, 39.83, 49.66),
];

/// `(tool, average precision, average recall, average f1)`.
const AVERAGE_CELLS: &[(&str, f64, f64, f64)] = &[
    ("bern2", 37.37, 37.42, 36.86),
    ("pubtator", 62.99, 48.98, 54.33),
    ("scispacy", 43.48, 34.01, 37.61),
    ("bent", 25.08, 24.49, 24.43),
    ("hunflair2", 60.90, 58.85, 58.79),
];

/// `(entity type, corpus, tool, entity-averaged f1, delta vs mention f1)`.
const MACRO_CELLS: &[(&str, &str, &str, f64, f64)] = &[
    ("Chemical", "MedMentions", "bern2", 30.15, -11.64),
    ("Chemical", "MedMentions", "hunflair2", 33.27, -17.90),
    ("Chemical", "MedMentions", "pubtator", 21.93, -9.35),
    ("Chemical", "MedMentions", "scispacy", 32.13, -2.82),
    ("Chemical", "MedMentions", "bent", 27.86, -13.04),
    ("Disease", "MedMentions", "bern2", 30.43, -16.90),
    ("Disease", "MedMentions", "hunflair2", 38.47, -19.10),
    ("Disease", "MedMentions", "pubtator", 26.14, -14.97),
    ("Disease", "MedMentions", "scispacy", 36.65, -4.13),
    ("Disease", "MedMentions", "bent", 23.96, -21.98),
    ("Gene", "tmVar (v3)", "bern2", 25.51, -18.45),
    ("Gene", "tmVar (v3)", "hunflair2", 47.47, -29.28),
    ("Gene", "tmVar (v3)", "pubtator", 72.46, -13.56),
    ("Gene", "tmVar (v3)", "bent", 0.31, -0.23),
    ("Species", "BioID", "bern2", 16.83, 2.48),
    ("Species", "BioID", "hunflair2", 8.38, -41.28),
    ("Species", "BioID", "pubtator", 20.73, -38.17),
    ("Species", "BioID", "scispacy", 4.78, -32.36),
    ("Species", "BioID", "bent", 3.25, -7.10),
];

/// `(tool, average delta)` for the delta table's average row.
const AVERAGE_DELTAS: &[(&str, f64)] = &[
    ("bern2", -11.13),
    ("hunflair2", -26.89),
    ("pubtator", -19.01),
    ("scispacy", -13.10),
    ("bent", -10.59),
];

#[test]
fn c1_f1_consistency() {
    let mut c = Checker::new("C1", "harmonic mean reproduces every frozen F1");
    for &(etype, corpus, tool, p, r, f1) in MENTION_ROWS {
        let computed = round2(harmonic_f1(p, r));
        c.check(
            &format!("{tool} {etype} {corpus}"),
            within(computed, f1, 0.01),
            format!("harmonic({p}, {r}) = {computed:.2}, frozen {f1:.2}"),
        );
    }
    c.finish();
}

#[test]
fn c2_cross_corpus_averages() {
    let mut c = Checker::new("C2", "equal-weight averages reproduce the frozen average row");
    for &(tool, avg_p, avg_r, avg_f1) in AVERAGE_CELLS {
        let rows: Vec<Score> = MENTION_ROWS
            .iter()
            .filter(|(_, _, t, ..)| *t == tool)
            .map(|&(_, _, _, p, r, f1)| Score { precision: p, recall: r, f1 })
            .collect();
        let avg = cross_corpus_average(&rows).unwrap();
        let inputs = |pick: fn(&Score) -> f64| {
            rows.iter().map(|s| format!("{:.2}", pick(s))).collect::<Vec<_>>().join(", ")
        };
        c.check(
            &format!("{tool} precision"),
            within(round2(avg.precision), avg_p, 0.01),
            format!(
                "mean of ({}) = {:.2}, frozen {avg_p:.2}",
                inputs(|s| s.precision),
                round2(avg.precision)
            ),
        );
        c.check(
            &format!("{tool} recall"),
            within(round2(avg.recall), avg_r, 0.01),
            format!(
                "mean of ({}) = {:.2}, frozen {avg_r:.2}; the per-slice rows are internally \
                 consistent (each frozen F1 is the harmonic mean of its own P/R), so when the \
                 recomputed mean disagrees, the frozen average cell itself is inconsistent \
                 with its inputs and cannot be reproduced by any correct averaging",
                inputs(|s| s.recall),
                round2(avg.recall)
            ),
        );
        c.check(
            &format!("{tool} f1"),
            within(round2(avg.f1), avg_f1, 0.01),
            format!(
                "mean of ({}) = {:.2}, frozen {avg_f1:.2}",
                inputs(|s| s.f1),
                round2(avg.f1)
            ),
        );
    }
    c.finish();
}

#[test]
fn c3_delta_table() {
    let mut c = Checker::new("C3", "delta table reproduces every frozen bracketed delta");
    let mut records = Vec::new();
    let record = |corpus: &str, tool: &str, etype: &str, level: &str, f1: f64| MetricRecord {
        corpus: corpus.to_string(),
        layer: tool.to_string(),
        etype: etype.to_string(),
        mode: "extraction".to_string(),
        level: level.to_string(),
        precision: 0.0,
        recall: 0.0,
        f1,
        tp: 0,
        fp: 0,
        fn_: 0,
    };
    for &(etype, corpus, tool, macro_f1, _) in MACRO_CELLS {
        records.push(record(corpus, tool, etype, "macro", macro_f1));
    }
    for &(etype, corpus, tool, _, _, f1) in MENTION_ROWS {
        records.push(record(corpus, tool, etype, "mention", f1));
    }
    let spec = ReportSpec {
        level: Level::Macro,
        metric: MetricChoice::F1,
        delta: true,
        format: ReportFormat::Tsv,
    };
    let model = build_table(&records, &spec).unwrap();
    c.check(
        "every record placed",
        model.unplaced.is_empty(),
        format!("unplaced records: {:?}", model.unplaced),
    );
    let column = |tool: &str| model.columns.iter().position(|c| c == tool);
    let row = |etype: &str, corpus: &str| {
        model.rows.iter().position(|r| r.etype == etype && r.corpus == corpus)
    };
    for &(etype, corpus, tool, macro_f1, delta) in MACRO_CELLS {
        let (ri, ci) = match (row(etype, corpus), column(tool)) {
            (Some(ri), Some(ci)) => (ri, ci),
            _ => {
                c.check(
                    &format!("{tool} {etype} placement"),
                    false,
                    "row or column missing from the table model".to_string(),
                );
                continue;
            }
        };
        match model.rows[ri].cells[ci].as_ref() {
            Some(cell) => {
                let got = cell.delta.map(round2);
                c.check(
                    &format!("{tool} {etype} delta"),
                    within(cell.f1, macro_f1, 0.0) && got.is_some_and(|d| within(d, delta, 0.0)),
                    format!("cell f1 {:.2}, delta {:?}, frozen {macro_f1:.2} {delta:+.2}", cell.f1, got),
                );
            }
            None => c.check(
                &format!("{tool} {etype} delta"),
                false,
                "cell unexpectedly empty".to_string(),
            ),
        }
    }
    // The tool with no frozen Gene row must yield an empty cell, not zeros.
    let gene_row = row("Gene", "tmVar (v3)").unwrap();
    let scispacy_col = column("scispacy").unwrap();
    c.check(
        "scispacy Gene cell empty",
        model.rows[gene_row].cells[scispacy_col].is_none(),
        "expected an absent cell".to_string(),
    );
    for &(tool, delta) in AVERAGE_DELTAS {
        let ci = column(tool).unwrap();
        let got = model.average[ci].as_ref().and_then(|cell| cell.delta).map(round2);
        c.check(
            &format!("{tool} average delta"),
            got.is_some_and(|d| within(d, delta, 0.0)),
            format!("average delta {got:?}, frozen {delta:+.2}"),
        );
    }
    let rendered = render_table(&model, &spec);
    for needle in ["(+2.48)", "(-41.28)"] {
        c.check(
            &format!("rendered table contains {needle}"),
            rendered.contains(needle),
            format!("missing from rendered table:\n{rendered}"),
        );
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// Frozen identifier-frequency references: two corpora, top-5 identifiers
// with their three most frequent surface forms and printed percentages.
// ---------------------------------------------------------------------------

struct FreqRow {
    entity: corpgen::FreqEntity,
    share: f64,
    surface_shares: [f64; 3],
}

fn disease_frequency_rows() -> Vec<FreqRow> {
    vec![
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "MESH:D009369",
                total: 715,
                top: [("cancer", 177), ("tumor", 169), ("tumors", 105)],
            },
            share: 3.89,
            surface_shares: [0.96, 0.92, 0.57],
        },
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "MESH:D004194",
                total: 537,
                top: [("disease", 238), ("diseases", 103), ("disorders", 46)],
            },
            share: 2.92,
            surface_shares: [1.3, 0.56, 0.25],
        },
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "MESH:D007239",
                total: 305,
                top: [("infection", 179), ("infections", 57), ("infected", 12)],
            },
            share: 1.66,
            surface_shares: [0.97, 0.31, 0.07],
        },
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "MESH:D009765",
                total: 262,
                top: [("obesity", 162), ("obese", 60), ("Obesity", 25)],
            },
            share: 1.43,
            surface_shares: [0.88, 0.33, 0.14],
        },
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "MESH:D001943",
                total: 251,
                top: [("breast cancer", 178), ("BC", 28), ("Breast Cancer", 10)],
            },
            share: 1.37,
            surface_shares: [0.97, 0.15, 0.05],
        },
    ]
}

fn species_frequency_rows() -> Vec<FreqRow> {
    vec![
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "NCBI taxon:10090",
                total: 4002,
                top: [("mice", 2923), ("mouse", 396), ("Mice", 64)],
            },
            share: 50.35,
            surface_shares: [36.77, 4.98, 0.81],
        },
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "NCBI taxon:9606",
                total: 688,
                top: [("human", 228), ("patients", 163), ("patient", 119)],
            },
            share: 8.66,
            surface_shares: [2.87, 2.05, 1.5],
        },
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "NCBI taxon:7227",
                total: 298,
                top: [("flies", 134), ("larvae", 53), ("fly", 18)],
            },
            share: 3.75,
            surface_shares: [1.69, 0.67, 0.23],
        },
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "NCBI taxon:4932",
                total: 196,
                top: [("S. cerevisiae", 48), ("yeast", 40), ("Yeast", 17)],
            },
            share: 2.47,
            surface_shares: [0.6, 0.5, 0.21],
        },
        FreqRow {
            entity: corpgen::FreqEntity {
                id: "NCBI taxon:7955",
                total: 179,
                top: [("larvae", 72), ("embryos", 48), ("zebrafish", 34)],
            },
            share: 2.25,
            surface_shares: [0.91, 0.6, 0.43],
        },
    ]
}

fn check_distribution(
    c: &mut Checker,
    label: &str,
    etype: EntityType,
    rows: &[FreqRow],
    total: usize,
) {
    let designed: usize = rows.iter().map(|r| r.entity.total).sum();
    let fillers = total - designed;
    let entities: Vec<corpgen::FreqEntity> = rows
        .iter()
        .map(|r| corpgen::FreqEntity { id: r.entity.id, total: r.entity.total, top: r.entity.top })
        .collect();
    let corpus = corpgen::frequency_corpus(label, &etype, &entities, fillers);
    let dist = analysis::distribution(&corpus, &LayerSel::Gold, &etype, 5, false).unwrap();
    c.check(
        &format!("{label} total"),
        dist.total_mentions == total,
        format!("distribution saw {} mentions, built {total}", dist.total_mentions),
    );
    c.check(
        &format!("{label} row count"),
        dist.rows.len() == 5,
        format!("top-5 request returned {} rows", dist.rows.len()),
    );
    for (i, expected) in rows.iter().enumerate() {
        let Some(row) = dist.rows.get(i) else { break };
        let id = canonicalize_id(expected.entity.id).unwrap();
        c.check(
            &format!("{label} rank {} identity", i + 1),
            row.id == id && row.count == expected.entity.total,
            format!("got {} x{}, expected {} x{}", row.id, row.count, id, expected.entity.total),
        );
        let got_share = analysis::share_percent(row.share);
        c.check(
            &format!("{label} rank {} share", i + 1),
            within(got_share, expected.share, 0.01),
            format!("share {got_share:.2}%, frozen {:.2}%", expected.share),
        );
        for (j, (surface, count)) in expected.entity.top.iter().enumerate() {
            let got = row.surfaces.get(j);
            let ok = got.is_some_and(|s| {
                s.surface == *surface
                    && s.count == *count
                    && within(analysis::share_percent(s.share), expected.surface_shares[j], 0.01)
            });
            c.check(
                &format!("{label} rank {} surface {}", i + 1, j + 1),
                ok,
                format!(
                    "got {:?}, expected {surface:?} x{count} at {:.2}%",
                    got.map(|s| (s.surface.clone(), s.count, analysis::share_percent(s.share))),
                    expected.surface_shares[j]
                ),
            );
        }
    }
}

#[test]
fn c4_frequency_shares() {
    let mut c = Checker::new("C4", "frequency shares reproduce frozen percentages");
    // Direct count/total arithmetic against every frozen percentage.
    let direct: &[(u64, u64, f64)] = &[
        (715, 18387, 3.89),
        (537, 18387, 2.92),
        (305, 18387, 1.66),
        (262, 18387, 1.43),
        (251, 18387, 1.37),
        (177, 18387, 0.96),
        (169, 18387, 0.92),
        (105, 18387, 0.57),
        (238, 18387, 1.3),
        (103, 18387, 0.56),
        (46, 18387, 0.25),
        (179, 18387, 0.97),
        (57, 18387, 0.31),
        (12, 18387, 0.07),
        (162, 18387, 0.88),
        (60, 18387, 0.33),
        (25, 18387, 0.14),
        (178, 18387, 0.97),
        (28, 18387, 0.15),
        (10, 18387, 0.05),
        (4002, 7949, 50.35),
        (688, 7949, 8.66),
        (298, 7949, 3.75),
        (196, 7949, 2.47),
        (179, 7949, 2.25),
        (2923, 7949, 36.77),
        (396, 7949, 4.98),
        (64, 7949, 0.81),
        (228, 7949, 2.87),
        (163, 7949, 2.05),
        (119, 7949, 1.5),
        (134, 7949, 1.69),
        (53, 7949, 0.67),
        (18, 7949, 0.23),
        (48, 7949, 0.6),
        (40, 7949, 0.5),
        (17, 7949, 0.21),
        (72, 7949, 0.91),
        (48, 7949, 0.6),
        (34, 7949, 0.43),
    ];
    for &(count, total, printed) in direct {
        let share = analysis::share_percent(count as f64 / total as f64);
        c.check(
            &format!("{count}/{total}"),
            within(share, printed, 0.01),
            format!("computed {share:.2}%, frozen {printed:.2}%"),
        );
    }
    // End-to-end: build corpora realizing those frequencies and rank them.
    check_distribution(&mut c, "diseases", EntityType::Disease, &disease_frequency_rows(), 18387);
    check_distribution(&mut c, "species", EntityType::Species, &species_frequency_rows(), 7949);
    c.finish();
}

// ---------------------------------------------------------------------------
// Fixed ten-document corpus with three prediction layers.
// ---------------------------------------------------------------------------

fn load_eval_fixture() -> Corpus {
    let opts = ParseOptions { strict: true, ..ParseOptions::default() };
    let gold_src = fs::read_to_string(fixture("c5/gold.ndjson")).unwrap();
    let (mut corpus, _) =
        ingest::parse_interchange_json(&gold_src, &LayerSel::Gold, &opts).unwrap();
    for name in ["alpha", "beta", "gamma"] {
        let src = fs::read_to_string(fixture(&format!("c5/{name}.ndjson"))).unwrap();
        let sel = LayerSel::Tool(name.to_string());
        let (parsed, _) = ingest::parse_interchange_json(&src, &sel, &opts).unwrap();
        let mut by_id: BTreeMap<String, Vec<Mention>> = parsed
            .documents
            .into_iter()
            .map(|mut d| {
                let mentions = d.layers.remove(name).unwrap_or_default();
                (d.doc_id, mentions)
            })
            .collect();
        for doc in &mut corpus.documents {
            doc.layers.insert(name.to_string(), by_id.remove(&doc.doc_id).unwrap_or_default());
        }
    }
    corpus
}

#[test]
fn c5_fixture_scores() {
    let mut c = Checker::new("C5", "fixture corpus scores match the brute-force reference");
    let corpus = load_eval_fixture();
    c.check(
        "fixture shape",
        corpus.documents.len() == 10,
        format!("{} documents", corpus.documents.len()),
    );

    let layers = ["alpha", "beta", "gamma"];
    let etypes = [EntityType::Disease, EntityType::Chemical];
    let modes = [MatchMode::ExtractionStrict, MatchMode::NerStrict, MatchMode::NerLenient];
    let slacks = [Slack::OneEnd, Slack::BothEnds];

    for layer in layers {
        for etype in &etypes {
            for mode in modes {
                for slack in slacks {
                    let opts = AlignOptions { slack };
                    let tag = format!("{layer}/{}/{}/{slack:?}", etype.name(), mode.name());
                    let lib = metrics::micro_mention(&corpus, layer, etype, mode, &opts).unwrap();
                    let orc = oracle::micro_tally(&corpus, layer, etype, mode, slack);
                    c.check(
                        &format!("mention {tag}"),
                        lib.tally == orc,
                        format!("library {:?}, reference {orc:?}", lib.tally),
                    );
                    let lib_macro =
                        metrics::macro_entity(&corpus, layer, etype, mode, &opts).unwrap();
                    let orc_macro = oracle::macro_eval(&corpus, layer, etype, mode, slack);
                    c.check(
                        &format!("entity breakdown {tag}"),
                        lib_macro.entities == orc_macro.entities
                            && lib_macro.pooled == orc_macro.pooled
                            && lib_macro.defined_precision == orc_macro.defined_precision
                            && lib_macro.defined_recall == orc_macro.defined_recall,
                        format!(
                            "library {:?} (pooled {:?}, defined {}/{}), reference {:?} \
                             (pooled {:?}, defined {}/{})",
                            lib_macro.entities,
                            lib_macro.pooled,
                            lib_macro.defined_precision,
                            lib_macro.defined_recall,
                            orc_macro.entities,
                            orc_macro.pooled,
                            orc_macro.defined_precision,
                            orc_macro.defined_recall
                        ),
                    );
                    let got = (
                        percent(lib_macro.score.precision),
                        percent(lib_macro.score.recall),
                        percent(lib_macro.score.f1),
                    );
                    let want = (
                        percent(orc_macro.precision),
                        percent(orc_macro.recall),
                        percent(orc_macro.f1),
                    );
                    c.check(
                        &format!("entity-averaged score {tag}"),
                        within(got.0, want.0, 0.0)
                            && within(got.1, want.1, 0.0)
                            && within(got.2, want.2, 0.0),
                        format!("library {got:?}, reference {want:?}"),
                    );
                }
            }
            let lib = metrics::document_level(&corpus, layer, etype).unwrap();
            let orc = oracle::doc_tally(&corpus, layer, etype);
            c.check(
                &format!("document {layer}/{}", etype.name()),
                lib.tally == orc,
                format!("library {:?}, reference {orc:?}", lib.tally),
            );
        }
    }

    // Hand-derived literals, frozen before the library existed. Strictest
    // pairing, one-end slack.
    let opts = AlignOptions { slack: Slack::OneEnd };
    let frozen: &[(&str, EntityType, (u64, u64, u64), (f64, f64, f64))] = &[
        ("alpha", EntityType::Disease, (7, 4, 4), (63.64, 63.64, 63.64)),
        ("beta", EntityType::Disease, (5, 6, 6), (45.45, 45.45, 45.45)),
        ("gamma", EntityType::Disease, (9, 0, 2), (100.00, 81.82, 90.00)),
        ("alpha", EntityType::Chemical, (2, 0, 0), (100.00, 100.00, 100.00)),
        ("beta", EntityType::Chemical, (0, 1, 2), (0.0, 0.0, 0.0)),
        ("gamma", EntityType::Chemical, (0, 0, 2), (0.0, 0.0, 0.0)),
    ];
    for (layer, etype, (tp, fp, fn_), (p, r, f1)) in frozen {
        let m = metrics::micro_mention(&corpus, layer, etype, MatchMode::ExtractionStrict, &opts)
            .unwrap();
        let got =
            (percent(m.score.precision), percent(m.score.recall), percent(m.score.f1));
        c.check(
            &format!("frozen mention {layer}/{}", etype.name()),
            m.tally == Tally { tp: *tp, fp: *fp, fn_: *fn_ }
                && within(got.0, *p, 0.0)
                && within(got.1, *r, 0.0)
                && within(got.2, *f1, 0.0),
            format!("got {:?} {got:?}, frozen ({tp},{fp},{fn_}) ({p},{r},{f1})", m.tally),
        );
    }
    // Eleven gold (document, identifier) pairs: d04 contributes two ids on
    // one mention, d07's two mentions collapse to one id, d05's
    // discontiguous mention is excluded, d10 contributes two misses.
    let doc = metrics::document_level(&corpus, "alpha", &EntityType::Disease).unwrap();
    c.check(
        "frozen document alpha/Disease",
        doc.tally == Tally { tp: 8, fp: 3, fn_: 3 }
            && within(percent(doc.score.precision), 72.73, 0.0)
            && within(percent(doc.score.recall), 72.73, 0.0)
            && within(percent(doc.score.f1), 72.73, 0.0),
        format!("got {:?}", doc.tally),
    );
    let mac = metrics::macro_entity(
        &corpus,
        "alpha",
        &EntityType::Disease,
        MatchMode::ExtractionStrict,
        &opts,
    )
    .unwrap();
    c.check(
        "frozen entity-averaged alpha/Disease",
        within(percent(mac.score.precision), 65.00, 0.0)
            && within(percent(mac.score.recall), 68.75, 0.0)
            && within(percent(mac.score.f1), 66.82, 0.0)
            && mac.defined_precision == 10
            && mac.defined_recall == 8
            && mac.pooled == Tally { tp: 7, fp: 4, fn_: 4 },
        format!(
            "got P {:.2} R {:.2} F1 {:.2}, defined {}/{}, pooled {:?}",
            percent(mac.score.precision),
            percent(mac.score.recall),
            percent(mac.score.f1),
            mac.defined_precision,
            mac.defined_recall,
            mac.pooled
        ),
    );
    c.finish();
}

// ---------------------------------------------------------------------------
// Property suites.
// ---------------------------------------------------------------------------

fn prop_config(cases: u32) -> PropConfig {
    PropConfig { cases, failure_persistence: None, ..PropConfig::default() }
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

#[test]
fn c6_property_suites() {
    let started = Instant::now();
    let mut c = Checker::new("C6", "property suites hold");

    // (a) Pairing is deterministic, one-to-one, and equal to the
    // brute-force greedy reference.
    let mut runner = TestRunner::new(prop_config(1000));
    let result = runner.run(&corpgen::align_instance(), |(gold, pred, mode, slack)| {
        let opts = AlignOptions { slack };
        let first = align(&gold, &pred, mode, &opts).map_err(fail)?;
        let second = align(&gold, &pred, mode, &opts).map_err(fail)?;
        prop_assert_eq!(&first, &second);
        let mut gold_seen = BTreeSet::new();
        let mut pred_seen = BTreeSet::new();
        for (g, p, _) in &first.pairs {
            prop_assert!(*g < gold.len() && *p < pred.len());
            prop_assert!(gold_seen.insert(*g), "gold index paired twice");
            prop_assert!(pred_seen.insert(*p), "prediction index paired twice");
        }
        for g in &first.unmatched_gold {
            prop_assert!(gold_seen.insert(*g), "gold index both paired and unmatched");
        }
        for p in &first.unmatched_pred {
            prop_assert!(pred_seen.insert(*p), "prediction index both paired and unmatched");
        }
        prop_assert_eq!(gold_seen.len(), gold.len());
        prop_assert_eq!(pred_seen.len(), pred.len());
        let lib_pairs: Vec<(usize, usize)> = first.pairs.iter().map(|(g, p, _)| (*g, *p)).collect();
        let reference = oracle::greedy_pairs(&gold, &pred, mode, slack);
        prop_assert_eq!(lib_pairs, reference);
        Ok(())
    });
    c.check("pairing determinism and one-to-one", result.is_ok(), format!("{result:?}"));

    // (b) Matched-pair count never decreases when the predicate widens
    // from strict spans to containment, at one-end slack.
    let mut runner = TestRunner::new(prop_config(1000));
    let layer_pair = (corpgen::raw_mentions(8), corpgen::raw_mentions(10)).prop_map(|(g, p)| {
        (
            corpgen::build_layer(&g, &EntityType::Disease),
            corpgen::build_layer(&p, &EntityType::Disease),
        )
    });
    let result = runner.run(&layer_pair, |(gold, pred)| {
        let opts = AlignOptions { slack: Slack::OneEnd };
        let strict = align(&gold, &pred, MatchMode::NerStrict, &opts).map_err(fail)?;
        let lenient = align(&gold, &pred, MatchMode::NerLenient, &opts).map_err(fail)?;
        prop_assert!(
            strict.tp() <= lenient.tp(),
            "strict pairing found {} pairs, lenient only {}",
            strict.tp(),
            lenient.tp()
        );
        Ok(())
    });
    c.check("strict-to-lenient monotonicity", result.is_ok(), format!("{result:?}"));

    // (c) Count merging is order-independent.
    let mut runner = TestRunner::new(prop_config(500));
    let tallies = prop::collection::vec((0u64..50, 0u64..50, 0u64..50), 0..40);
    let result = runner.run(&tallies, |raw| {
        let tallies: Vec<Tally> =
            raw.iter().map(|&(tp, fp, fn_)| Tally { tp, fp, fn_ }).collect();
        let forward: Tally = tallies.iter().copied().sum();
        let reverse: Tally = tallies.iter().rev().copied().sum();
        let interleaved: Tally = tallies
            .iter()
            .step_by(2)
            .chain(tallies.iter().skip(1).step_by(2))
            .copied()
            .sum();
        prop_assert_eq!(forward, reverse);
        prop_assert_eq!(forward, interleaved);
        Ok(())
    });
    c.check("count merge order independence", result.is_ok(), format!("{result:?}"));

    // (d) Serialize -> parse -> serialize is a string fixpoint in both
    // formats, and parsing preserves documents and mentions.
    let strict = ParseOptions { strict: true, ..ParseOptions::default() };
    let mut runner = TestRunner::new(prop_config(500));
    let result = runner.run(&corpgen::roundtrip_corpus(), |corpus| {
        let sel = LayerSel::Gold;
        let json1 = ingest::serialize_interchange_json(&corpus, &sel).map_err(fail)?;
        let (from_json, _) = ingest::parse_interchange_json(&json1, &sel, &strict).map_err(fail)?;
        let json2 = ingest::serialize_interchange_json(&from_json, &sel).map_err(fail)?;
        prop_assert_eq!(&json1, &json2, "JSON serialization is not a fixpoint");
        prop_assert_eq!(from_json.documents.len(), corpus.documents.len());
        for (a, b) in corpus.documents.iter().zip(&from_json.documents) {
            prop_assert_eq!(&a.doc_id, &b.doc_id);
            prop_assert_eq!(&a.text, &b.text);
            prop_assert_eq!(&a.gold, &b.gold);
        }
        let block1 = ingest::serialize_pubtator(&corpus, &sel).map_err(fail)?;
        let (from_block, _) = ingest::parse_pubtator(&block1, &sel, &strict).map_err(fail)?;
        let block2 = ingest::serialize_pubtator(&from_block, &sel).map_err(fail)?;
        prop_assert_eq!(&block1, &block2, "block serialization is not a fixpoint");
        prop_assert_eq!(from_block.documents.len(), corpus.documents.len());
        for (a, b) in corpus.documents.iter().zip(&from_block.documents) {
            prop_assert_eq!(&a.doc_id, &b.doc_id);
            prop_assert_eq!(&a.text, &b.text);
            prop_assert_eq!(&a.gold, &b.gold);
        }
        Ok(())
    });
    c.check("round-trip fixpoint", result.is_ok(), format!("{result:?}"));

    // (e) Agreement buckets partition the recovered universe.
    let mut runner = TestRunner::new(prop_config(300));
    let result = runner.run(&corpgen::overlap_instance(), |(corpus, names, mode, slack)| {
        let opts = AlignOptions { slack };
        let summary =
            analysis::overlap(&corpus, &names, &EntityType::Disease, mode, &opts).map_err(fail)?;
        let bucketed: usize = summary.by_cardinality.values().sum();
        prop_assert_eq!(bucketed, summary.universe, "buckets do not partition the universe");
        let full = summary.by_cardinality.get(&names.len()).copied().unwrap_or(0);
        prop_assert_eq!(full, summary.all_tools);
        let singles: usize = summary.exclusive.values().sum();
        prop_assert_eq!(
            singles,
            summary.by_cardinality.get(&1).copied().unwrap_or(0),
            "exclusive counts disagree with the single-tool bucket"
        );
        for name in summary.exclusive.keys() {
            prop_assert!(names.contains(name));
        }
        Ok(())
    });
    c.check("agreement partition", result.is_ok(), format!("{result:?}"));

    // (f) Canonicalization, eligibility filtering, and identifier mapping
    // are idempotent.
    let mut runner = TestRunner::new(prop_config(400));
    let result = runner.run(&corpgen::raw_id_strategy(), |raw| {
        if let Ok(once) = canonicalize_id(&raw) {
            let twice = canonicalize_id(&once.to_string()).map_err(fail)?;
            prop_assert_eq!(&once, &twice, "canonical form is not a fixpoint");
        }
        Ok(())
    });
    c.check("canonicalization idempotence", result.is_ok(), format!("{result:?}"));

    let mut runner = TestRunner::new(prop_config(200));
    let result = runner.run(&corpgen::overlap_instance(), |(corpus, _, _, _)| {
        let types: BTreeSet<EntityType> = [EntityType::Disease].into_iter().collect();
        let once = ingest::filter_eligible(&corpus, &types);
        let twice = ingest::filter_eligible(&once, &types);
        prop_assert_eq!(&once, &twice, "eligibility filter is not a fixpoint");
        Ok(())
    });
    c.check("filter idempotence", result.is_ok(), format!("{result:?}"));

    let mut runner = TestRunner::new(prop_config(200));
    let result = runner.run(&corpgen::map_instance(), |(docs, xref, first_image_only, target_sel)| {
        let corpus = corpgen::map_corpus(&docs);
        let mut report = LoadReport::default();
        let mut table = MappingTable::default();
        table.add_vocabulary(idmap::parse_vocab_tsv(
            "va",
            EntityType::Disease,
            "MESH:A1\talpha one\nMESH:A2\talpha two\nMESH:A3\talpha three\n",
            &mut report,
        ));
        table.add_vocabulary(idmap::parse_vocab_tsv(
            "vb",
            EntityType::Chemical,
            "CHEBI:B1\tbeta one\nCHEBI:B2\tbeta two\n",
            &mut report,
        ));
        let xref_tsv: String = xref
            .iter()
            .map(|(src, dst)| format!("UN:U{}\t{}\n", src + 1, corpgen::XREF_TARGETS[*dst]))
            .collect();
        idmap::parse_xref_tsv(&xref_tsv, &mut table, &mut report);
        let targets: Vec<String> = match target_sel {
            0 => vec!["va".to_string()],
            1 => vec!["vb".to_string()],
            _ => vec!["va".to_string(), "vb".to_string()],
        };
        let opts = MapOptions { first_image_only };
        let (once, _) =
            idmap::map_layer(&corpus, &LayerSel::Gold, &table, &targets, &opts).map_err(fail)?;
        let (twice, _) =
            idmap::map_layer(&once, &LayerSel::Gold, &table, &targets, &opts).map_err(fail)?;
        prop_assert_eq!(&once, &twice, "identifier mapping is not a fixpoint");
        Ok(())
    });
    c.check("mapping idempotence", result.is_ok(), format!("{result:?}"));

    let elapsed = started.elapsed();
    c.check(
        "wall-clock budget",
        elapsed.as_secs() < 60,
        format!("property suites took {elapsed:?}, budget 60s"),
    );
    c.finish();
}

// ---------------------------------------------------------------------------
// Dictionary linking, end to end through the binary.
// ---------------------------------------------------------------------------

fn xce(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_xce")).args(args).output().expect("spawn xce");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Parses the evaluate command's tab-separated stdout into keyed rows.
fn parse_tsv(stdout: &str) -> Vec<BTreeMap<String, String>> {
    let mut lines = stdout
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("best\t"));
    let header: Vec<String> = match lines.next() {
        Some(line) => line.split('\t').map(str::to_string).collect(),
        None => return Vec::new(),
    };
    lines
        .map(|line| {
            header.iter().cloned().zip(line.split('\t').map(str::to_string)).collect()
        })
        .collect()
}

#[test]
fn c7_linking_end_to_end() {
    let mut c = Checker::new("C7", "dictionary linking recovers gold identifiers");
    let dir = tempfile::tempdir().unwrap();
    let vocab_path = fixture("linker/vocab.tsv");
    let exact_path = fixture("linker/exact.ndjson");
    let mutated_path = fixture("linker/mutated.ndjson");
    let opts = ParseOptions { strict: true, ..ParseOptions::default() };

    // Independent scorer over the raw vocabulary file.
    let vocab_src = fs::read_to_string(&vocab_path).unwrap();
    let pairs: Vec<(EntityId, String)> = vocab_src
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, alias) = l.split_once('\t').unwrap();
            (canonicalize_id(id).unwrap(), alias.to_string())
        })
        .collect();
    c.check("vocabulary size", pairs.len() == 11, format!("{} aliases", pairs.len()));
    let tri = oracle::tri_oracle(&pairs);
    let folded: BTreeSet<String> = pairs.iter().map(|(_, alias)| oracle::fold(alias)).collect();

    // Leg 1: every surface is a verbatim alias; dictionary detection must
    // find exactly the gold span and linking must return its identifier.
    let exact_src = fs::read_to_string(&exact_path).unwrap();
    let (exact_corpus, _) =
        ingest::parse_interchange_json(&exact_src, &LayerSel::Gold, &opts).unwrap();
    for doc in &exact_corpus.documents {
        let mention = &doc.gold[0];
        let spans = oracle::detect_spans(&doc.text, &folded, 8);
        c.check(
            &format!("detection {}", doc.doc_id),
            spans == vec![(mention.span.start, mention.span.end)],
            format!("detected {spans:?}, gold ({}, {})", mention.span.start, mention.span.end),
        );
        let (id, sim) = tri.best(&mention.surface).unwrap();
        c.check(
            &format!("exact hit {}", doc.doc_id),
            sim > 0.999_999 && id == mention.ids[0],
            format!("best ({id}, {sim:.4}), gold {}", mention.ids[0]),
        );
    }
    let linked_exact = dir.path().join("linked_exact.ndjson");
    let vocab_arg = format!("diseases:disease:{}", vocab_path.display());
    let (ok, _, stderr) = xce(&[
        "link",
        "--input",
        exact_path.to_str().unwrap(),
        "--vocab",
        &vocab_arg,
        "--out",
        linked_exact.to_str().unwrap(),
    ]);
    c.check("link run (exact)", ok, stderr.clone());
    let (ok, stdout, stderr) = xce(&[
        "evaluate",
        "--gold",
        exact_path.to_str().unwrap(),
        "--pred",
        &format!("linked:{}", linked_exact.display()),
        "--type",
        "disease",
        "--mode",
        "extraction",
        "--level",
        "mention",
    ]);
    c.check("evaluate run (exact)", ok, stderr);
    let rows = parse_tsv(&stdout);
    let row = rows.first();
    let cell = |key: &str| row.and_then(|r| r.get(key).cloned()).unwrap_or_default();
    c.check(
        "exact aliases score a perfect 100.00",
        row.is_some()
            && cell("f1") == "100.00"
            && cell("tp") == "10"
            && cell("fp") == "0"
            && cell("fn") == "0",
        format!("scored row {row:?}"),
    );

    // Leg 2: surfaces are mostly pluralized. The independent scorer fixes
    // which mentions stay above threshold and which identifier each gets.
    let mutated_src = fs::read_to_string(&mutated_path).unwrap();
    let (mutated_corpus, _) =
        ingest::parse_interchange_json(&mutated_src, &LayerSel::Gold, &opts).unwrap();
    let tau = 0.7;
    let mut expected = Tally::default();
    for doc in &mutated_corpus.documents {
        let mention = &doc.gold[0];
        let (id, sim) = tri.best(&mention.surface).unwrap();
        c.check(
            &format!("threshold margin {}", doc.doc_id),
            sim > 0.999_999 || (sim - tau).abs() > 0.02,
            format!("similarity {sim:.4} is within 0.02 of the threshold {tau}"),
        );
        if sim >= tau {
            if id == mention.ids[0] {
                expected.tp += 1;
            } else {
                expected.fp += 1;
                expected.fn_ += 1;
            }
        } else {
            expected.fn_ += 1;
        }
    }
    c.check(
        "independent scorer outcome",
        expected == Tally { tp: 9, fp: 0, fn_: 1 },
        format!("expected tally {expected:?}"),
    );
    let expected_f1 = percent(metrics::score(&expected).f1);
    let linked_mut = dir.path().join("linked_mutated.ndjson");
    let (ok, _, stderr) = xce(&[
        "link",
        "--input",
        mutated_path.to_str().unwrap(),
        "--vocab",
        &vocab_arg,
        "--spans",
        "gold",
        "--tau",
        "0.7",
        "--out",
        linked_mut.to_str().unwrap(),
    ]);
    c.check("link run (mutated)", ok, stderr.clone());
    let (ok, stdout, stderr) = xce(&[
        "evaluate",
        "--gold",
        mutated_path.to_str().unwrap(),
        "--pred",
        &format!("linked:{}", linked_mut.display()),
        "--type",
        "disease",
        "--mode",
        "extraction",
        "--level",
        "mention",
    ]);
    c.check("evaluate run (mutated)", ok, stderr);
    let rows = parse_tsv(&stdout);
    let row = rows.first();
    let cell = |key: &str| row.and_then(|r| r.get(key).cloned()).unwrap_or_default();
    let f1: f64 = cell("f1").parse().unwrap_or(f64::NAN);
    c.check(
        "mutated surfaces score as the scorer predicts",
        row.is_some()
            && within(f1, expected_f1, 0.005)
            && cell("tp") == expected.tp.to_string()
            && cell("fp") == expected.fp.to_string()
            && cell("fn") == expected.fn_.to_string(),
        format!("scored row {row:?}, expected {expected:?} at F1 {expected_f1:.2}"),
    );
    c.check(
        "mutated surfaces stay at or above 90.00",
        f1 >= 90.0,
        format!("F1 {f1:.2}"),
    );
    c.finish();
}

// ---------------------------------------------------------------------------
// Remote annotation client against the scripted stub server.
// ---------------------------------------------------------------------------

fn mini_corpus(texts: &[(&str, &str)]) -> Corpus {
    let mut corpus = Corpus::new("fetch");
    for (id, text) in texts {
        corpus.documents.push(Document::new(id.to_string(), text.to_string()));
    }
    corpus
}

fn fetch_config(base_url: String) -> FetchConfig {
    FetchConfig {
        base_url,
        rate_per_sec: 0.0,
        concurrency: 1,
        retries: 0,
        timeout_ms: 5000,
        backoff_base_ms: 1,
        cache_dir: None,
    }
}

#[test]
fn c8_fetch_contract() {
    let mut c = Checker::new("C8", "remote client honors its configuration");

    // One request per document on success; the layer materializes.
    let server = StubServer::start(vec![StubResponse::ok_annotate("Disease", "MESH:D1")]);
    let mut corpus = mini_corpus(&[("a1", "asthma is common"), ("a2", "cancer spreads")]);
    let report = fetch_annotations(&mut corpus, "remote", &fetch_config(server.base_url())).unwrap();
    c.check(
        "success: one request per document",
        server.request_count() == 2,
        format!("{} requests for 2 documents", server.request_count()),
    );
    c.check(
        "success: report",
        report.fetched == 2 && report.failed.is_empty() && report.retries == 0,
        format!("fetched {}, failed {:?}, retries {}", report.fetched, report.failed, report.retries),
    );
    c.check(
        "success: annotations land in the layer",
        corpus.documents.iter().all(|d| {
            d.layers.get("remote").map(|m| m.len()) == Some(1)
        }),
        format!("layers: {:?}", corpus.documents.iter().map(|d| d.layers.len()).collect::<Vec<_>>()),
    );
    drop(server);

    // Retryable statuses are retried until success.
    let server = StubServer::start(vec![
        StubResponse::status(500),
        StubResponse::status(503),
        StubResponse::ok_annotate("Disease", "MESH:D1"),
    ]);
    let mut corpus = mini_corpus(&[("b1", "asthma persists")]);
    let mut cfg = fetch_config(server.base_url());
    cfg.retries = 3;
    let report = fetch_annotations(&mut corpus, "remote", &cfg).unwrap();
    c.check(
        "retry: three requests for two retryable failures",
        server.request_count() == 3 && report.retries == 2,
        format!("{} requests, {} retries", server.request_count(), report.retries),
    );
    c.check(
        "retry: eventual success",
        report.fetched == 1 && report.failed.is_empty(),
        format!("fetched {}, failed {:?}", report.fetched, report.failed),
    );
    drop(server);

    // A permanent status is never retried.
    let server = StubServer::start(vec![StubResponse::status(404)]);
    let mut corpus = mini_corpus(&[("c1", "nothing here")]);
    let mut cfg = fetch_config(server.base_url());
    cfg.retries = 3;
    let report = fetch_annotations(&mut corpus, "remote", &cfg).unwrap();
    c.check(
        "permanent: single request",
        server.request_count() == 1 && report.retries == 0,
        format!("{} requests, {} retries", server.request_count(), report.retries),
    );
    c.check(
        "permanent: document fails",
        report.failed.len() == 1 && report.fetched == 0,
        format!("failed {:?}", report.failed),
    );
    drop(server);

    // Retry budget: N additional attempts mean N+1 requests, then failure.
    let server = StubServer::start(vec![StubResponse::status(500)]);
    let mut corpus = mini_corpus(&[("d1", "still broken")]);
    let mut cfg = fetch_config(server.base_url());
    cfg.retries = 2;
    let report = fetch_annotations(&mut corpus, "remote", &cfg).unwrap();
    c.check(
        "exhaustion: retries plus one requests",
        server.request_count() == 3 && report.retries == 2 && report.failed.len() == 1,
        format!("{} requests, {} retries, failed {:?}", server.request_count(), report.retries, report.failed),
    );
    drop(server);

    // Zero additional retries means exactly one request.
    let server = StubServer::start(vec![StubResponse::status(500)]);
    let mut corpus = mini_corpus(&[("e1", "one shot")]);
    let report = fetch_annotations(&mut corpus, "remote", &fetch_config(server.base_url())).unwrap();
    c.check(
        "zero retries: single request",
        server.request_count() == 1 && report.failed.len() == 1,
        format!("{} requests", server.request_count()),
    );
    drop(server);

    // The cache satisfies repeat fetches without any HTTP traffic.
    let cache = tempfile::tempdir().unwrap();
    let server = StubServer::start(vec![StubResponse::ok_annotate("Disease", "MESH:D1")]);
    let texts = [("f1", "asthma waxes"), ("f2", "asthma wanes")];
    let mut cfg = fetch_config(server.base_url());
    cfg.cache_dir = Some(cache.path().to_path_buf());
    let mut first_run = mini_corpus(&texts);
    let report1 = fetch_annotations(&mut first_run, "remote", &cfg).unwrap();
    let mut second_run = mini_corpus(&texts);
    let report2 = fetch_annotations(&mut second_run, "remote", &cfg).unwrap();
    c.check(
        "cache: first run over the wire",
        report1.fetched == 2 && report1.cache_hits == 0,
        format!("fetched {}, cache hits {}", report1.fetched, report1.cache_hits),
    );
    c.check(
        "cache: second run entirely from cache",
        report2.cache_hits == 2 && report2.fetched == 0 && server.request_count() == 2,
        format!(
            "cache hits {}, fetched {}, {} total requests",
            report2.cache_hits,
            report2.fetched,
            server.request_count()
        ),
    );
    c.check(
        "cache: both runs produce the same layer",
        first_run == second_run,
        "cached annotations differ from fetched ones".to_string(),
    );
    let entries: Vec<String> = fs::read_dir(cache.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    c.check(
        "cache: content-addressed file names",
        entries.len() == 2
            && entries.iter().all(|name| {
                name.strip_suffix(".pubtator").is_some_and(|stem| {
                    stem.len() == 64 && stem.chars().all(|ch| ch.is_ascii_hexdigit())
                })
            }),
        format!("cache entries {entries:?}"),
    );
    drop(server);

    // Rate limiting spaces requests out.
    let server = StubServer::start(vec![StubResponse::ok_annotate("Disease", "MESH:D1")]);
    let mut corpus = mini_corpus(&[("g1", "first"), ("g2", "second"), ("g3", "third")]);
    let mut cfg = fetch_config(server.base_url());
    cfg.rate_per_sec = 25.0;
    cfg.concurrency = 4;
    fetch_annotations(&mut corpus, "remote", &cfg).unwrap();
    let times = server.request_times();
    let span = times.iter().max().unwrap().duration_since(*times.iter().min().unwrap());
    c.check(
        "rate: three requests at 25/s span at least 60ms",
        times.len() == 3 && span.as_millis() >= 60,
        format!("{} requests spanning {span:?}", times.len()),
    );
    drop(server);

    // The concurrency cap binds and is actually used.
    let server =
        StubServer::start(vec![StubResponse::ok_annotate("Disease", "MESH:D1").with_delay(60)]);
    let texts: Vec<(String, String)> =
        (0..6).map(|i| (format!("h{i}"), format!("word {i}"))).collect();
    let borrowed: Vec<(&str, &str)> =
        texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut corpus = mini_corpus(&borrowed);
    let mut cfg = fetch_config(server.base_url());
    cfg.concurrency = 2;
    fetch_annotations(&mut corpus, "remote", &cfg).unwrap();
    c.check(
        "concurrency: in-flight high-water mark equals the cap",
        server.max_concurrency() == 2 && server.request_count() == 6,
        format!(
            "high-water {} across {} requests",
            server.max_concurrency(),
            server.request_count()
        ),
    );
    drop(server);

    // A payload that does not parse fails that document.
    let server = StubServer::start(vec![StubResponse::fixed(200, "not\ta\tvalid\tpayload")]);
    let mut corpus = mini_corpus(&[("i1", "garbled reply")]);
    let report = fetch_annotations(&mut corpus, "remote", &fetch_config(server.base_url())).unwrap();
    c.check(
        "malformed payload: document fails",
        report.failed.len() == 1 && report.fetched == 0 && server.request_count() == 1,
        format!("failed {:?}, {} requests", report.failed, server.request_count()),
    );
    drop(server);

    // Fetching into the gold layer is refused outright.
    let server = StubServer::start(vec![StubResponse::ok_annotate("Disease", "MESH:D1")]);
    let mut corpus = mini_corpus(&[("j1", "hands off")]);
    let err = fetch_annotations(&mut corpus, "gold", &fetch_config(server.base_url()));
    c.check(
        "gold layer refused",
        matches!(err, Err(Error::Contract(_))) && server.request_count() == 0,
        format!("result {err:?}, {} requests", server.request_count()),
    );
    c.finish();
}
