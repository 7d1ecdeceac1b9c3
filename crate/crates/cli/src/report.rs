//! Tabular report rendering (TSV or JSON lines) and atomic file output.
//!
//! Every report-producing subcommand builds a list of uniform rows, renders
//! them in the requested format and writes the result in one atomic step:
//! the bytes land in a temporary file next to the target which is then
//! renamed over it, so a failing run never leaves a truncated report behind.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ReportFormat {
    /// Tab-separated values with a header row; absent cells render as `-`.
    #[default]
    Tsv,
    /// One JSON object per line; absent cells are omitted.
    Jsonl,
}

/// One report cell. Numbers carry the decimal count used for TSV rendering;
/// JSONL always receives the full-precision value.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Num { value: f64, decimals: usize },
    Text(String),
    Missing,
}

impl Cell {
    pub fn num(value: f64, decimals: usize) -> Cell {
        Cell::Num { value, decimals }
    }

    /// `value` rounded for display, or `-` when absent.
    pub fn opt(value: Option<f64>, decimals: usize) -> Cell {
        match value {
            Some(v) => Cell::num(v, decimals),
            None => Cell::Missing,
        }
    }

    pub fn text(s: impl Into<String>) -> Cell {
        Cell::Text(s.into())
    }

    fn tsv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num { value, decimals } => format!("{value:.decimals$}"),
            Cell::Text(s) => s.clone(),
            Cell::Missing => "-".into(),
        }
    }

    fn json(&self) -> Option<Value> {
        match self {
            Cell::Int(i) => Some(Value::from(*i)),
            Cell::Num { value, .. } => serde_json::Number::from_f64(*value).map(Value::Number),
            Cell::Text(s) => Some(Value::from(s.as_str())),
            Cell::Missing => None,
        }
    }
}

/// A row of named cells. All rows of one report share the same column set,
/// in the same order (enforced when rendering).
#[derive(Debug, Clone, Default)]
pub struct Row {
    cells: Vec<(&'static str, Cell)>,
}

impl Row {
    pub fn new() -> Row {
        Row::default()
    }

    pub fn col(mut self, name: &'static str, cell: Cell) -> Row {
        self.cells.push((name, cell));
        self
    }
}

/// Render rows in the requested format. Panics if rows disagree on columns;
/// commands construct uniform schemas by design.
pub fn render(rows: &[Row], format: ReportFormat) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let columns: Vec<&'static str> = first.cells.iter().map(|(n, _)| *n).collect();
    for row in rows {
        let names: Vec<&'static str> = row.cells.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, columns, "report rows must share one column set");
    }

    let mut out = String::new();
    match format {
        ReportFormat::Tsv => {
            out.push_str(&columns.join("\t"));
            out.push('\n');
            for row in rows {
                let line: Vec<String> = row.cells.iter().map(|(_, c)| c.tsv()).collect();
                out.push_str(&line.join("\t"));
                out.push('\n');
            }
        }
        ReportFormat::Jsonl => {
            for row in rows {
                let mut obj = Map::new();
                for (name, cell) in &row.cells {
                    if let Some(v) = cell.json() {
                        obj.insert((*name).into(), v);
                    }
                }
                out.push_str(&Value::Object(obj).to_string());
                out.push('\n');
            }
        }
    }
    out
}

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let context = |e: &dyn std::fmt::Display| {
        CliError::Input(format!("cannot write {}: {e}", path.display()))
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| context(&e))?;
    tmp.write_all(bytes).map_err(|e| context(&e))?;
    tmp.persist(path).map_err(|e| context(&e))?;
    Ok(())
}

/// Render and write in one go.
pub fn write_report(
    path: &Path,
    rows: &[Row],
    format: ReportFormat,
) -> Result<(), CliError> {
    write_atomic(path, render(rows, format).as_bytes())
}
