//! Result records and report files.
//!
//! Every report file opens with a header line echoing the merged
//! configuration and the checksums of the models involved, followed by one
//! JSON record per line. Tables are pure renderings of the records: reading
//! the records back and re-rendering reproduces the table file byte for
//! byte.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use synveil::{Error, Result};

use crate::config::ExperimentConfig;

/// First line of every report file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ReportHeader {
    pub command: String,
    pub config: ExperimentConfig,
    /// Model content hashes, keyed by role (`parser`, `obfuscator`, …).
    pub checksums: BTreeMap<String, String>,
}

impl ReportHeader {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        ReportHeader { command: command.into(), config: config.clone(), checksums: BTreeMap::new() }
    }

    pub fn with_checksum(mut self, role: &str, checksum: &str) -> Self {
        self.checksums.insert(role.into(), checksum.into());
        self
    }

    pub fn with_checksums(mut self, checksums: BTreeMap<String, String>) -> Self {
        self.checksums.extend(checksums);
        self
    }
}

/// Writes a header line followed by one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, header: &ReportHeader, records: &[T]) -> Result<()> {
    let mut text = serde_json::to_string(header).map_err(json_error)?;
    text.push('\n');
    for record in records {
        text.push_str(&serde_json::to_string(record).map_err(json_error)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes a single pretty-printed JSON document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_error)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Contract(format!("report serialization failed: {e}"))
}

/// One attacker's results on one evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AttackerColumn {
    pub name: String,
    /// Substituted positions scored.
    pub positions: usize,
    /// True words missing from the attacker's vocabulary.
    pub missing: usize,
    /// Privacy score: 100 − MRR, higher is more private.
    pub prv: f64,
    /// Mean reciprocal rank of the true word, percent.
    pub mrr: f64,
    /// Top-1 recovery accuracy, percent.
    pub top1: f64,
    /// Accuracy/privacy ratio UAS ÷ MRR; `None` when MRR is zero.
    pub ratio: Option<f64>,
}

/// One evaluation condition: a substitution scheme scored for parsing
/// accuracy and, per attacker, privacy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ResultRow {
    /// Condition label (`none`, `proper-nouns`, `+nouns`, …).
    pub label: String,
    pub sentences: usize,
    pub uas: f64,
    pub las: f64,
    pub attackers: Vec<AttackerColumn>,
}

/// Renders rows as an aligned text table. Pure: the table is a function of
/// the records alone, so regenerating it from a records file is
/// byte-identical.
pub fn render_table(rows: &[ResultRow]) -> String {
    let mut names: Vec<String> = Vec::new();
    for row in rows {
        for col in &row.attackers {
            if !names.contains(&col.name) {
                names.push(col.name.clone());
            }
        }
    }
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["condition".to_string(), "UAS".into(), "LAS".into()];
    for name in &names {
        header.push(format!("{name}:prv"));
        header.push(format!("{name}:top1"));
        header.push(format!("{name}:ratio"));
    }
    grid.push(header);
    for row in rows {
        let mut cells = vec![
            row.label.clone(),
            format!("{:.2}", row.uas),
            format!("{:.2}", row.las),
        ];
        for name in &names {
            match row.attackers.iter().find(|c| &c.name == name) {
                Some(col) => {
                    cells.push(format!("{:.1}", col.prv));
                    cells.push(format!("{:.1}", col.top1));
                    cells.push(match col.ratio {
                        Some(r) => format!("{r:.2}"),
                        None => "-".into(),
                    });
                }
                None => cells.extend(["-".into(), "-".into(), "-".into()]),
            }
        }
        grid.push(cells);
    }
    let columns = grid[0].len();
    let widths: Vec<usize> =
        (0..columns).map(|c| grid.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &grid {
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            if c == 0 {
                let _ = write!(out, "{cell:<width$}", width = widths[0]);
            } else {
                let _ = write!(out, "{cell:>width$}", width = widths[c]);
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    }
    out
}

/// Reads a records file written by [`write_jsonl`] back into its header and
/// rows.
pub fn read_records(path: &Path) -> Result<(ReportHeader, Vec<ResultRow>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Argument(format!("{}: empty records file", path.display())))?;
    let header: ReportHeader = serde_json::from_str(first)
        .map_err(|e| Error::Parse { line: 1, msg: format!("records header: {e}") })?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: ResultRow = serde_json::from_str(line)
            .map_err(|e| Error::Parse { line: i + 1, msg: format!("result record: {e}") })?;
        rows.push(row);
    }
    Ok((header, rows))
}
