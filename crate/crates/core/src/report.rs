//! Result tables from metric records.
//!
//! [`build_table`] arranges metric records into a grid with one row per
//! (entity type, corpus) pair and one column per tool layer, appends an
//! average row across corpora, and optionally brackets each cell with the
//! difference between entity-averaged and mention-level F1. Deltas and
//! averages are computed at full precision; rounding to two decimals
//! happens only when a table is rendered. [`render`] emits TSV, Markdown,
//! LaTeX, or JSON.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::metrics::{cross_corpus_average, round2, Level, MetricRecord, Score, Tally};
use crate::{Error, Result};

/// Which figures each cell shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricChoice {
    /// F1 only: one column per tool.
    F1,
    /// Precision, recall, and F1: three columns per tool.
    Prf,
}

impl MetricChoice {
    pub fn parse(name: &str) -> Option<MetricChoice> {
        match name.to_ascii_lowercase().as_str() {
            "f1" => Some(MetricChoice::F1),
            "prf" => Some(MetricChoice::Prf),
            _ => None,
        }
    }
}

/// Output syntax of a rendered table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Markdown,
    Latex,
    Json,
}

impl ReportFormat {
    pub fn parse(name: &str) -> Option<ReportFormat> {
        match name.to_ascii_lowercase().as_str() {
            "tsv" => Some(ReportFormat::Tsv),
            "markdown" | "md" => Some(ReportFormat::Markdown),
            "latex" | "tex" => Some(ReportFormat::Latex),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReportFormat::Tsv => "tsv",
            ReportFormat::Markdown => "markdown",
            ReportFormat::Latex => "latex",
            ReportFormat::Json => "json",
        }
    }
}

/// Table configuration.
#[derive(Debug, Clone, Copy)]
pub struct ReportSpec {
    /// Evaluation level of the records that fill the cells.
    pub level: Level,
    pub metric: MetricChoice,
    /// Bracket each F1 with its difference from the mention-level F1 of
    /// the same (type, corpus, tool). Requires `level` to be
    /// [`Level::Macro`].
    pub delta: bool,
    pub format: ReportFormat,
}

impl Default for ReportSpec {
    fn default() -> ReportSpec {
        ReportSpec {
            level: Level::Mention,
            metric: MetricChoice::F1,
            delta: false,
            format: ReportFormat::Tsv,
        }
    }
}

impl ReportSpec {
    /// Parses a flat key-value spec. Recognized keys: `level`, `metric`,
    /// `delta`, `format`. Missing keys keep their defaults.
    pub fn from_flat_kv(content: &str) -> Result<ReportSpec> {
        let mut spec = ReportSpec::default();
        for (key, value) in parse_flat_kv(content)? {
            match key.as_str() {
                "level" => {
                    spec.level = Level::parse(&value).ok_or_else(|| Error::Parse {
                        location: "report spec".into(),
                        message: format!("unknown level {value:?}"),
                    })?
                }
                "metric" => {
                    spec.metric = MetricChoice::parse(&value).ok_or_else(|| Error::Parse {
                        location: "report spec".into(),
                        message: format!("unknown metric {value:?}"),
                    })?
                }
                "delta" => {
                    spec.delta = parse_bool(&value).ok_or_else(|| Error::Parse {
                        location: "report spec".into(),
                        message: format!("expected true or false, found {value:?}"),
                    })?
                }
                "format" => {
                    spec.format = ReportFormat::parse(&value).ok_or_else(|| Error::Parse {
                        location: "report spec".into(),
                        message: format!("unknown format {value:?}"),
                    })?
                }
                other => {
                    return Err(Error::Parse {
                        location: "report spec".into(),
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        Ok(spec)
    }
}

pub fn parse_bool(value: &str) -> Option<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// Parses `key = value` lines; `#` comments and blank lines are skipped,
/// later duplicates of a key win. Lines without `=` are errors.
pub fn parse_flat_kv(content: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (index, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                location: format!("line {}", index + 1),
                message: format!("expected key = value, found {line:?}"),
            });
        };
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// One filled table cell. Percentages stay at full precision in the model;
/// renders round them to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub tally: Option<Tally>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    #[serde(rename = "type")]
    pub etype: String,
    pub corpus: String,
    pub cells: Vec<Option<Cell>>,
}

/// A fully arranged table, before rendering.
#[derive(Debug, Clone, Serialize)]
pub struct TableModel {
    pub level: String,
    /// Tool layer names, sorted.
    pub columns: Vec<String>,
    /// One row per (type, corpus), sorted.
    pub rows: Vec<TableRow>,
    /// Per-column average across corpora: independent means of precision,
    /// recall, and F1 over the column's present cells (the averaged F1 is
    /// not recomputed from the averaged precision and recall), and the
    /// mean of present deltas.
    pub average: Vec<Option<Cell>>,
    /// Records that fit no cell: wrong level, or duplicates of an already
    /// filled cell.
    pub unplaced: Vec<MetricRecord>,
}

/// Arranges records into a [`TableModel`] per `spec`.
///
/// Records at `spec.level` fill cells keyed by (type, corpus, layer); the
/// first record per key wins and later ones land in `unplaced`. With
/// `spec.delta`, mention-level records provide the F1 baseline each cell's
/// delta is computed against; they do not fill cells of their own.
pub fn build_table(records: &[MetricRecord], spec: &ReportSpec) -> Result<TableModel> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no metric records to arrange".into()));
    }
    if spec.delta && spec.level != Level::Macro {
        return Err(Error::Contract(
            "delta reporting requires macro-level cells".into(),
        ));
    }
    let main_level = spec.level.name();
    let baseline_level = Level::Mention.name();

    let mut cells: BTreeMap<(String, String, String), Cell> = BTreeMap::new();
    let mut baselines: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    let mut unplaced = Vec::new();
    for record in records {
        let key = (
            record.etype.clone(),
            record.corpus.clone(),
            record.layer.clone(),
        );
        if record.level == main_level {
            if cells.contains_key(&key) {
                unplaced.push(record.clone());
                continue;
            }
            cells.insert(
                key,
                Cell {
                    precision: record.precision,
                    recall: record.recall,
                    f1: record.f1,
                    delta: None,
                    tally: Some(Tally::new(record.tp, record.fp, record.fn_)),
                },
            );
        } else if spec.delta && record.level == baseline_level {
            if baselines.contains_key(&key) {
                unplaced.push(record.clone());
                continue;
            }
            baselines.insert(key, record.f1);
        } else {
            unplaced.push(record.clone());
        }
    }

    if spec.delta {
        for (key, cell) in &mut cells {
            cell.delta = baselines.get(key).map(|baseline| cell.f1 - baseline);
        }
    }

    let mut columns: Vec<String> = cells.keys().map(|(_, _, layer)| layer.clone()).collect();
    columns.sort();
    columns.dedup();
    let mut row_keys: Vec<(String, String)> = cells
        .keys()
        .map(|(etype, corpus, _)| (etype.clone(), corpus.clone()))
        .collect();
    row_keys.sort();
    row_keys.dedup();

    let rows: Vec<TableRow> = row_keys
        .into_iter()
        .map(|(etype, corpus)| {
            let cells = columns
                .iter()
                .map(|layer| {
                    cells
                        .get(&(etype.clone(), corpus.clone(), layer.clone()))
                        .cloned()
                })
                .collect();
            TableRow {
                etype,
                corpus,
                cells,
            }
        })
        .collect();

    let average = (0..columns.len())
        .map(|column| {
            let present: Vec<&Cell> = rows
                .iter()
                .filter_map(|row| row.cells[column].as_ref())
                .collect();
            if present.is_empty() {
                return None;
            }
            // cross_corpus_average takes independent means of the three
            // fields, so feeding percentages yields averaged percentages.
            let scores: Vec<Score> = present
                .iter()
                .map(|cell| Score {
                    precision: cell.precision,
                    recall: cell.recall,
                    f1: cell.f1,
                })
                .collect();
            let mean = cross_corpus_average(&scores).expect("present is non-empty");
            let deltas: Vec<f64> = present.iter().filter_map(|cell| cell.delta).collect();
            let delta = if deltas.is_empty() {
                None
            } else {
                Some(deltas.iter().sum::<f64>() / deltas.len() as f64)
            };
            Some(Cell {
                precision: mean.precision,
                recall: mean.recall,
                f1: mean.f1,
                delta,
                tally: None,
            })
        })
        .collect();

    Ok(TableModel {
        level: main_level.to_string(),
        columns,
        rows,
        average,
        unplaced,
    })
}

/// Builds and renders a table in one step.
pub fn render(records: &[MetricRecord], spec: &ReportSpec) -> Result<String> {
    let model = build_table(records, spec)?;
    Ok(render_table(&model, spec))
}

/// Renders an arranged table in the format chosen by `ReportSpec`.
pub fn render_table(model: &TableModel, spec: &ReportSpec) -> String {
    match spec.format {
        ReportFormat::Tsv => render_delimited(model, spec, "\t", "", ""),
        ReportFormat::Markdown => render_markdown(model, spec),
        ReportFormat::Latex => render_latex(model, spec),
        ReportFormat::Json => render_json(model),
    }
}

fn fmt_number(value: f64) -> String {
    format!("{:.2}", round2(value))
}

fn fmt_delta(delta: f64) -> String {
    let rounded = round2(delta);
    if rounded == 0.0 {
        "(+0.00)".to_string()
    } else if rounded > 0.0 {
        format!("(+{rounded:.2})")
    } else {
        format!("(-{:.2})", rounded.abs())
    }
}

fn fmt_f1_cell(cell: &Cell) -> String {
    match cell.delta {
        Some(delta) => format!("{} {}", fmt_number(cell.f1), fmt_delta(delta)),
        None => fmt_number(cell.f1),
    }
}

fn header_cells(model: &TableModel, spec: &ReportSpec) -> Vec<String> {
    let mut header = vec!["Type".to_string(), "Corpus".to_string()];
    for column in &model.columns {
        match spec.metric {
            MetricChoice::F1 => header.push(column.clone()),
            MetricChoice::Prf => {
                header.push(format!("{column}/P"));
                header.push(format!("{column}/R"));
                header.push(format!("{column}/F1"));
            }
        }
    }
    header
}

fn body_cells(cells: &[Option<Cell>], spec: &ReportSpec) -> Vec<String> {
    let mut out = Vec::new();
    for cell in cells {
        match (cell, spec.metric) {
            (None, MetricChoice::F1) => out.push("-".to_string()),
            (None, MetricChoice::Prf) => out.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
            (Some(cell), MetricChoice::F1) => out.push(fmt_f1_cell(cell)),
            (Some(cell), MetricChoice::Prf) => {
                out.push(fmt_number(cell.precision));
                out.push(fmt_number(cell.recall));
                out.push(fmt_f1_cell(cell));
            }
        }
    }
    out
}

fn table_lines(model: &TableModel, spec: &ReportSpec) -> Vec<Vec<String>> {
    let mut lines = vec![header_cells(model, spec)];
    for row in &model.rows {
        let mut line = vec![row.etype.clone(), row.corpus.clone()];
        line.extend(body_cells(&row.cells, spec));
        lines.push(line);
    }
    let mut avg = vec!["Avg.".to_string(), "all".to_string()];
    avg.extend(body_cells(&model.average, spec));
    lines.push(avg);
    lines
}

fn render_delimited(
    model: &TableModel,
    spec: &ReportSpec,
    sep: &str,
    prefix: &str,
    suffix: &str,
) -> String {
    let mut out = String::new();
    for line in table_lines(model, spec) {
        out.push_str(prefix);
        out.push_str(&line.join(sep));
        out.push_str(suffix);
        out.push('\n');
    }
    if !model.unplaced.is_empty() {
        out.push_str(&format!("# unplaced records: {}\n", model.unplaced.len()));
    }
    out
}

fn render_markdown(model: &TableModel, spec: &ReportSpec) -> String {
    let lines = table_lines(model, spec);
    let mut out = String::new();
    for (index, line) in lines.iter().enumerate() {
        out.push_str("| ");
        out.push_str(&line.join(" | "));
        out.push_str(" |\n");
        if index == 0 {
            let marks: Vec<&str> = (0..line.len())
                .map(|i| if i < 2 { ":---" } else { "---:" })
                .collect();
            out.push_str("| ");
            out.push_str(&marks.join(" | "));
            out.push_str(" |\n");
        }
    }
    if !model.unplaced.is_empty() {
        out.push_str(&format!("\n_unplaced records: {}_\n", model.unplaced.len()));
    }
    out
}

fn latex_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' | '%' | '#' | '_' | '$' => {
                out.push('\\');
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

fn render_latex(model: &TableModel, spec: &ReportSpec) -> String {
    let lines = table_lines(model, spec);
    let width = lines[0].len();
    let spec_cols: String = (0..width).map(|i| if i < 2 { 'l' } else { 'r' }).collect();
    let mut out = format!("\\begin{{tabular}}{{{spec_cols}}}\n\\hline\n");
    for (index, line) in lines.iter().enumerate() {
        let escaped: Vec<String> = line.iter().map(|cell| latex_escape(cell)).collect();
        out.push_str(&escaped.join(" & "));
        out.push_str(" \\\\\n");
        if index == 0 || index + 2 == lines.len() {
            out.push_str("\\hline\n");
        }
    }
    out.push_str("\\hline\n\\end{tabular}\n");
    if !model.unplaced.is_empty() {
        out.push_str(&format!("% unplaced records: {}\n", model.unplaced.len()));
    }
    out
}

fn render_json(model: &TableModel) -> String {
    let mut rounded = model.clone();
    let round_cell = |cell: &mut Option<Cell>| {
        if let Some(cell) = cell {
            cell.precision = round2(cell.precision);
            cell.recall = round2(cell.recall);
            cell.f1 = round2(cell.f1);
            cell.delta = cell.delta.map(round2);
        }
    };
    for row in &mut rounded.rows {
        row.cells.iter_mut().for_each(round_cell);
    }
    rounded.average.iter_mut().for_each(round_cell);
    let mut out = serde_json::to_string_pretty(&rounded).expect("table model serializes");
    out.push('\n');
    out
}
