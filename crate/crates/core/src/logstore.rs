//! Logged bandit feedback: the record model, JSON Lines ingestion, and
//! selection of evaluation windows from the accumulated stream.
//!
//! A log file starts with a header line `{"d": <int>, "K": <int>}` declaring
//! the context dimension and action count, followed by one record per line:
//!
//! ```text
//! {"d": 2, "K": 3}
//! {"t": 1700000000000, "x": [0.5, -1.25], "a": 2, "p": 0.25, "r": 1.0}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Fnv1a};

// ── Errors ──────────────────────────────────────────────────────────────

/// Why a single record is invalid against its dataset header.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("propensity must lie in (0, 1], got {0}")]
    Propensity(f64),
    #[error("context has dimension {got}, header declares d = {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("action {action} is outside [0, {k})")]
    Action { action: u64, k: usize },
    #[error("non-finite value in field `{0}`")]
    NonFinite(&'static str),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot read log file {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("log file has no header line")]
    MissingHeader,
    #[error("line {line}: invalid header: {msg}")]
    Header { line: usize, msg: String },
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Record { line: usize, source: RecordError },
}

impl LogError {
    /// 1-based line number of the offending line, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Header { line, .. } | Self::Malformed { line, .. } | Self::Record { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("context dimension must be >= 1 and action count >= 2 (got d = {d}, K = {k})")]
    Shape { d: usize, k: usize },
    #[error("record {index}: {source}")]
    Record { index: usize, source: RecordError },
}

// ── Records ─────────────────────────────────────────────────────────────

/// One logged interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Milliseconds since the epoch.
    #[serde(rename = "t")]
    pub timestamp: i64,
    #[serde(rename = "x")]
    pub context: Vec<f64>,
    #[serde(rename = "a")]
    pub action: u64,
    /// Logging-policy probability of `action` given `context`.
    #[serde(rename = "p")]
    pub propensity: f64,
    #[serde(rename = "r")]
    pub reward: f64,
}

impl LogRecord {
    pub fn validate(&self, d: usize, k: usize) -> Result<(), RecordError> {
        if !self.propensity.is_finite() {
            return Err(RecordError::NonFinite("p"));
        }
        if !(self.propensity > 0.0 && self.propensity <= 1.0) {
            return Err(RecordError::Propensity(self.propensity));
        }
        if !self.reward.is_finite() {
            return Err(RecordError::NonFinite("r"));
        }
        if self.context.iter().any(|v| !v.is_finite()) {
            return Err(RecordError::NonFinite("x"));
        }
        if self.context.len() != d {
            return Err(RecordError::Dimension {
                got: self.context.len(),
                expected: d,
            });
        }
        if self.action >= k as u64 {
            return Err(RecordError::Action { action: self.action, k });
        }
        Ok(())
    }

    /// Canonical JSON Lines rendering (no trailing newline).
    pub fn to_line(&self) -> String {
        let mut out = String::with_capacity(48 + self.context.len() * 20);
        let _ = write!(out, "{{\"t\": {}, \"x\": [", self.timestamp);
        for (i, v) in self.context.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{v:?}");
        }
        let _ = write!(
            out,
            "], \"a\": {}, \"p\": {:?}, \"r\": {:?}}}",
            self.action, self.propensity, self.reward
        );
        out
    }
}

/// Canonical header line (no trailing newline).
pub fn header_line(d: usize, k: usize) -> String {
    format!("{{\"d\": {d}, \"K\": {k}}}")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    d: usize,
    #[serde(rename = "K")]
    k: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    t: i64,
    x: Vec<f64>,
    a: u64,
    p: f64,
    r: f64,
}

// ── Dataset ─────────────────────────────────────────────────────────────

/// A validated, timestamp-ordered collection of log records.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDataset {
    d: usize,
    k: usize,
    records: Vec<LogRecord>,
}

impl LogDataset {
    /// Validates every record and stable-sorts by timestamp.
    pub fn new(d: usize, k: usize, mut records: Vec<LogRecord>) -> Result<Self, DatasetError> {
        if d < 1 || k < 2 {
            return Err(DatasetError::Shape { d, k });
        }
        for (index, rec) in records.iter().enumerate() {
            rec.validate(d, k)
                .map_err(|source| DatasetError::Record { index, source })?;
        }
        records.sort_by_key(|r| r.timestamp);
        Ok(Self { d, k, records })
    }

    pub fn empty(d: usize, k: usize) -> Result<Self, DatasetError> {
        Self::new(d, k, Vec::new())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn min_timestamp(&self) -> Option<i64> {
        self.records.first().map(|r| r.timestamp)
    }

    pub fn max_timestamp(&self) -> Option<i64> {
        self.records.last().map(|r| r.timestamp)
    }

    pub fn mean_reward(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        Some(self.records.iter().map(|r| r.reward).sum::<f64>() / self.records.len() as f64)
    }

    // Sub-selections of an already validated dataset skip re-validation.
    fn with_records(&self, records: Vec<LogRecord>) -> Self {
        Self {
            d: self.d,
            k: self.k,
            records,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", header_line(self.d, self.k))?;
        for rec in &self.records {
            writeln!(w, "{}", rec.to_line())?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("canonical rendering is ASCII")
    }

    /// FNV-1a over the canonical rendering of header and records.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.update(header_line(self.d, self.k).as_bytes());
        h.update(b"\n");
        for rec in &self.records {
            h.update(rec.to_line().as_bytes());
            h.update(b"\n");
        }
        h.finish()
    }
}

// ── Ingestion ───────────────────────────────────────────────────────────

/// Records of a log file in file order, before timestamp sorting.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFile {
    pub d: usize,
    pub k: usize,
    pub records: Vec<LogRecord>,
}

impl LogFile {
    /// Parses a complete log document. Whitespace-only lines are skipped but
    /// still counted for line numbers.
    pub fn parse(text: &str) -> Result<Self, LogError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());

        let (hline, htext) = lines.next().ok_or(LogError::MissingHeader)?;
        let header: Header = serde_json::from_str(htext).map_err(|e| LogError::Header {
            line: hline,
            msg: e.to_string(),
        })?;
        if header.d < 1 || header.k < 2 {
            return Err(LogError::Header {
                line: hline,
                msg: format!("need d >= 1 and K >= 2, got d = {}, K = {}", header.d, header.k),
            });
        }

        let mut records = Vec::new();
        for (line, l) in lines {
            let raw: RawRecord = serde_json::from_str(l).map_err(|e| LogError::Malformed {
                line,
                msg: e.to_string(),
            })?;
            let rec = LogRecord {
                timestamp: raw.t,
                context: raw.x,
                action: raw.a,
                propensity: raw.p,
                reward: raw.r,
            };
            rec.validate(header.d, header.k)
                .map_err(|source| LogError::Record { line, source })?;
            records.push(rec);
        }
        Ok(Self {
            d: header.d,
            k: header.k,
            records,
        })
    }

    pub fn read(path: &Path) -> Result<Self, LogError> {
        let text = fs::read_to_string(path).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Dataset over the first `count` records in file order.
    pub fn prefix(&self, count: usize) -> LogDataset {
        let mut records: Vec<LogRecord> = self.records.iter().take(count).cloned().collect();
        records.sort_by_key(|r| r.timestamp);
        LogDataset {
            d: self.d,
            k: self.k,
            records,
        }
    }

    pub fn into_dataset(self) -> LogDataset {
        let mut records = self.records;
        records.sort_by_key(|r| r.timestamp);
        LogDataset {
            d: self.d,
            k: self.k,
            records,
        }
    }
}

/// Reads and validates a log file into a timestamp-sorted dataset.
pub fn ingest(path: &Path) -> Result<LogDataset, LogError> {
    LogFile::read(path).map(LogFile::into_dataset)
}

/// Appends records to an existing log file without rewriting the header.
pub fn append_records(path: &Path, records: &[LogRecord]) -> io::Result<()> {
    let mut f = fs::OpenOptions::new().append(true).open(path)?;
    let mut buf = String::new();
    for rec in records {
        buf.push_str(&rec.to_line());
        buf.push('\n');
    }
    f.write_all(buf.as_bytes())
}

// ── Windows ─────────────────────────────────────────────────────────────

/// How the evaluation window is cut from the log stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum WindowSpec {
    /// The `n` most recent records.
    LastN { n: usize },
    /// Records with `t_start <= t < t_end`.
    TimeRange { t_start: i64, t_end: i64 },
    /// `n` records drawn uniformly without replacement.
    ShuffledSample { n: usize, seed: u64 },
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self::LastN { n: 1000 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Self::LastN { n } | Self::ShuffledSample { n, .. } if n == 0 => Err("window size n must be >= 1".into()),
            Self::TimeRange { t_start, t_end } if t_start >= t_end => {
                Err(format!("time range needs t_start < t_end, got [{t_start}, {t_end})"))
            }
            _ => Ok(()),
        }
    }
}

/// Cuts a window out of `dataset`. The result is always timestamp-ordered and
/// may be empty.
pub fn select_window(dataset: &LogDataset, spec: &WindowSpec) -> LogDataset {
    let records = dataset.records();
    match *spec {
        WindowSpec::LastN { n } => {
            let start = records.len().saturating_sub(n);
            dataset.with_records(records[start..].to_vec())
        }
        WindowSpec::TimeRange { t_start, t_end } => dataset.with_records(
            records
                .iter()
                .filter(|r| r.timestamp >= t_start && r.timestamp < t_end)
                .cloned()
                .collect(),
        ),
        WindowSpec::ShuffledSample { n, seed } => {
            if n >= records.len() {
                return dataset.clone();
            }
            let mut rng = rng::rng_from(seed, &[]);
            let mut picked = index::sample(&mut rng, records.len(), n).into_vec();
            // records are already in timestamp order, so index order is the canonical order
            picked.sort_unstable();
            dataset.with_records(picked.into_iter().map(|i| records[i].clone()).collect())
        }
    }
}
