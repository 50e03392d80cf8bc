use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::CliError;

/// A named table whose first column is `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_columns(name: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, values: &[f64]) {
        let mut row = Vec::with_capacity(values.len() + 1);
        row.push(t);
        row.extend_from_slice(values);
        debug_assert_eq!(row.len(), self.columns.len() + 1);
        self.rows.push(row);
    }

    /// Header `t,<columns>` and one line per row, every value in
    /// 17-significant-digit scientific notation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn write_csv(dir: &Path, series: &Series) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{}.csv", series.name));
    std::fs::write(&path, series.to_csv()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub fn write_json(dir: &Path, summary: &Value) -> Result<PathBuf, CliError> {
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// JSON number, or `null` for non-finite values.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}
