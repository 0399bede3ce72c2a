use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::csvfmt::g9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogError {
    #[error("cannot add channel `{0}` after the first row")]
    ChannelSchemaFrozen(String),
    #[error("channel `{0}` already exists")]
    DuplicateChannel(String),
    #[error("channel `{channel}` expects {expected} values, got {got}")]
    WidthMismatch { channel: String, expected: usize, got: usize },
    #[error("expected {expected} channels, got {got}")]
    ChannelCount { expected: usize, got: usize },
    #[error("timestamp {t} does not follow {last}")]
    NonMonotonicTime { t: f64, last: f64 },
    #[error("writing log: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Channel {
    name: String,
    columns: Vec<String>,
}

/// Column-group time series sharing one time axis. Rows are stored flat, so
/// appends are amortized O(1).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogBuffer {
    channels: Vec<Channel>,
    width: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

/// `prefix_0 .. prefix_{n-1}`.
pub fn indexed_columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

impl LogBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(rows: usize, width: usize) -> Self {
        Self { times: Vec::with_capacity(rows), values: Vec::with_capacity(rows * width), ..Self::default() }
    }

    pub fn add_channel(&mut self, name: &str, columns: Vec<String>) -> Result<(), LogError> {
        if !self.times.is_empty() {
            return Err(LogError::ChannelSchemaFrozen(name.to_string()));
        }
        if self.channels.iter().any(|c| c.name == name) {
            return Err(LogError::DuplicateChannel(name.to_string()));
        }
        self.width += columns.len();
        self.channels.push(Channel { name: name.to_string(), columns });
        Ok(())
    }

    /// One row: a timestamp plus one slice per channel, in channel order.
    pub fn append(&mut self, t: f64, row: &[&[f64]]) -> Result<(), LogError> {
        if row.len() != self.channels.len() {
            return Err(LogError::ChannelCount { expected: self.channels.len(), got: row.len() });
        }
        for (c, v) in self.channels.iter().zip(row) {
            if c.columns.len() != v.len() {
                return Err(LogError::WidthMismatch { channel: c.name.clone(), expected: c.columns.len(), got: v.len() });
            }
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(LogError::NonMonotonicTime { t, last });
            }
        }
        self.times.push(t);
        for v in row {
            self.values.extend_from_slice(v);
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn header(&self) -> Vec<&str> {
        std::iter::once("time").chain(self.channels.iter().flat_map(|c| c.columns.iter().map(String::as_str))).collect()
    }

    /// Values of one row, without the timestamp.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    /// The series of one named column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.channels.iter().flat_map(|c| &c.columns).position(|c| c == name)?;
        Some((0..self.rows()).map(|i| self.row(i)[idx]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(16 * (self.width + 1) * (self.rows() + 1));
        out.push_str(&self.header().join(","));
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&g9(*t));
            for v in self.row(i) {
                out.push(',');
                let _ = write!(out, "{}", g9(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn export_csv(&self, path: &Path) -> Result<(), LogError> {
        std::fs::write(path, self.to_csv()).map_err(|e| LogError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer() -> LogBuffer {
        let mut b = LogBuffer::new();
        b.add_channel("q", indexed_columns("q", 2)).unwrap();
        b.add_channel("tau", indexed_columns("tau", 2)).unwrap();
        b
    }

    #[test]
    fn header_and_rows() {
        let mut b = buffer();
        for k in 1..=2000 {
            let t = k as f64 * 1e-3;
            b.append(t, &[&[t, -t], &[0.5, 1.0 / 3.0]]).unwrap();
        }
        let csv = b.to_csv();
        assert_eq!(csv.lines().count(), 2001);
        assert!(csv.starts_with("time,q_0,q_1,tau_0,tau_1\n0.001,0.001,-0.001,0.5,0.333333333\n"));
        assert!(!csv.contains('\r'));
        assert_eq!(b.column("tau_0").unwrap().len(), 2000);
    }

    #[test]
    fn schema_freezes_after_first_row() {
        let mut b = buffer();
        b.append(0.0, &[&[0.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert_eq!(b.add_channel("extra", vec!["x".into()]), Err(LogError::ChannelSchemaFrozen("extra".into())));
    }

    #[test]
    fn rejects_bad_rows() {
        let mut b = buffer();
        assert!(matches!(b.append(0.0, &[&[0.0], &[0.0, 0.0]]), Err(LogError::WidthMismatch { .. })));
        assert!(matches!(b.append(0.0, &[&[0.0, 0.0]]), Err(LogError::ChannelCount { .. })));
        b.append(1.0, &[&[0.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert!(matches!(b.append(1.0, &[&[0.0, 0.0], &[0.0, 0.0]]), Err(LogError::NonMonotonicTime { .. })));
    }

    #[test]
    fn export_is_byte_identical() {
        let mut b = buffer();
        b.append(0.0, &[&[0.1, 0.2], &[0.3, 0.4]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        b.export_csv(&p1).unwrap();
        b.export_csv(&p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
