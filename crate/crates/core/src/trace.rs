//! Sampled coherence-vs-time series and its CSV form:
//!
//! ```text
//! # sequence=cpmg
//! # n=16
//! t_us,coherence,stderr
//! 0.5,0.93,0.004
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DecayTrace {
    /// Total evolution time, µs.
    pub t: Vec<f64>,
    pub coherence: Vec<f64>,
    /// Standard error per point; zeros when not known.
    pub stderr: Vec<f64>,
    /// Ordered key/value pairs (sequence, n, tau, model, seed, ...).
    pub metadata: Vec<(String, String)>,
}

impl DecayTrace {
    pub fn new(t: Vec<f64>, coherence: Vec<f64>, stderr: Vec<f64>) -> Result<Self> {
        if t.len() != coherence.len() || t.len() != stderr.len() {
            return Err(Error::invalid("trace columns have different lengths"));
        }
        Ok(Self {
            t,
            coherence,
            stderr,
            metadata: Vec::new(),
        })
    }

    pub fn without_errors(t: Vec<f64>, coherence: Vec<f64>) -> Result<Self> {
        let n = t.len();
        Self::new(t, coherence, vec![0.0; n])
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.stderr.iter().any(|&s| s > 0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("t_us,coherence,stderr\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_f64(self.t[i]),
                fmt_f64(self.coherence[i]),
                fmt_f64(self.stderr[i])
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut metadata = Vec::new();
        let mut header_seen = false;
        let (mut t, mut c, mut e) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    metadata.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 2 {
                return Err(Error::Parse(format!(
                    "line {}: expected at least 2 columns",
                    lineno + 1
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {s:?}", lineno + 1)))
            };
            t.push(parse(cols[0])?);
            c.push(parse(cols[1])?);
            e.push(if cols.len() > 2 { parse(cols[2])? } else { 0.0 });
        }
        Ok(Self {
            t,
            coherence: c,
            stderr: e,
            metadata,
        })
    }
}

/// Named numeric columns with `# key=value` metadata, for outputs that are
/// not a single decay trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: Vec<(String, String)>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metadata: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut metadata = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    metadata.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            match &columns {
                None => columns = Some(line.split(',').map(|c| c.trim().to_string()).collect()),
                Some(cols) => {
                    let row = line
                        .split(',')
                        .map(|c| {
                            c.trim()
                                .parse::<f64>()
                                .map_err(|_| Error::Parse(format!("line {}: bad number {c:?}", lineno + 1)))
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    if row.len() != cols.len() {
                        return Err(Error::Parse(format!(
                            "line {}: expected {} columns, got {}",
                            lineno + 1,
                            cols.len(),
                            row.len()
                        )));
                    }
                    rows.push(row);
                }
            }
        }
        Ok(Self {
            columns: columns.ok_or_else(|| Error::Parse("table has no header".into()))?,
            rows,
            metadata,
        })
    }
}

/// Shortest decimal representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
