//! Ranked bias tables rendered as markdown or CSV.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::Result;
use crate::probe::BiasScoreRow;
use crate::store::TripleStore;

pub const DEFAULT_MIN_COUNT: u64 = 20;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub b_p: f64,
    pub count_a: u64,
    pub count_b: u64,
}

/// Rows with `count_a + count_b >= min_count_threshold`, sorted by `b_p`
/// descending and then by label ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub title: String,
    /// Header of the `count_a` column in markdown, e.g. `C_male`.
    pub column_a: String,
    pub column_b: String,
    rows: Vec<ReportRow>,
    pub min_count_threshold: u64,
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

pub fn rank_order(a: &ReportRow, b: &ReportRow) -> Ordering {
    b.b_p.total_cmp(&a.b_p).then_with(|| a.label.cmp(&b.label))
}

impl BiasReport {
    pub fn new(
        title: impl Into<String>,
        column_a: impl Into<String>,
        column_b: impl Into<String>,
        rows: Vec<ReportRow>,
        min_count_threshold: u64,
        top_k: usize,
    ) -> Self {
        let mut rows: Vec<ReportRow> = rows
            .into_iter()
            .filter(|r| r.count_a + r.count_b >= min_count_threshold)
            .collect();
        rows.sort_by(rank_order);
        BiasReport {
            title: title.into(),
            column_a: column_a.into(),
            column_b: column_b.into(),
            rows,
            min_count_threshold,
            top_k,
        }
    }

    /// Attaches target labels from the store to probe output.
    pub fn from_scores(
        store: &TripleStore,
        scores: &[BiasScoreRow],
        title: impl Into<String>,
        column_a: impl Into<String>,
        column_b: impl Into<String>,
        min_count_threshold: u64,
        top_k: usize,
    ) -> Result<Self> {
        let rows = scores
            .iter()
            .map(|s| {
                Ok(ReportRow {
                    label: store.entity_label(s.target)?.to_string(),
                    b_p: s.b_p,
                    count_a: s.count_a,
                    count_b: s.count_b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(title, column_a, column_b, rows, min_count_threshold, top_k))
    }

    /// All rows that passed the count filter, ranked.
    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    /// The first `top_k` ranked rows; what both renderings print.
    pub fn visible_rows(&self) -> &[ReportRow] {
        &self.rows[..self.rows.len().min(self.top_k)]
    }
}

pub fn render_report(report: &BiasReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_markdown(report: &BiasReport) -> String {
    let mut out = String::new();
    if !report.title.is_empty() {
        let _ = write!(out, "## {}\n\n", report.title);
    }
    let _ = writeln!(out, "| target | b_p | {} | {} |", report.column_a, report.column_b);
    out.push_str("|---|---:|---:|---:|\n");
    for row in report.visible_rows() {
        let _ = writeln!(out, "| {} | {:.3} | {} | {} |", row.label, row.b_p, row.count_a, row.count_b);
    }
    out
}

fn render_csv(report: &BiasReport) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    // writing into a Vec cannot fail
    writer.write_record(["target", "b_p", "count_a", "count_b"]).unwrap();
    for row in report.visible_rows() {
        writer
            .write_record([
                row.label.clone(),
                row.b_p.to_string(),
                row.count_a.to_string(),
                row.count_b.to_string(),
            ])
            .unwrap();
    }
    String::from_utf8(writer.into_inner().unwrap()).unwrap()
}

/// Parses a CSV written by [`render_report`] back into rows.
pub fn parse_csv(text: &str) -> std::result::Result<Vec<ReportRow>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != ["target", "b_p", "count_a", "count_b"] {
        return Err(format!("unexpected header {header:?}"));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let num = |i: usize| rec[i].parse::<u64>().map_err(|e| e.to_string());
            Ok(ReportRow {
                label: rec[0].to_string(),
                b_p: rec[1].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?,
                count_a: num(2)?,
                count_b: num(3)?,
            })
        })
        .collect()
}
