//! Sampled trajectory records and their CSV form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version of the CSV column layout written by [`TimeSeriesLog::write_csv`].
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log has no samples")]
    Empty,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row} has {got} values, expected {expected}")]
    RowWidth { row: usize, got: usize, expected: usize },
    #[error("time is not increasing at row {0}")]
    NonMonotone(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad number `{value}` in column `{column}`")]
    Parse { column: String, value: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl TimeSeriesLog {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new(), metadata: BTreeMap::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<(), LogError> {
        if row.len() != self.columns.len() {
            return Err(LogError::RowWidth { row: self.rows.len(), got: row.len(), expected: self.columns.len() });
        }
        if let (Some(last), Some(t)) = (self.rows.last(), row.first()) {
            if !(*t > last[0]) {
                return Err(LogError::NonMonotone(self.rows.len()));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize, LogError> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| LogError::MissingColumn(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, LogError> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn has(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c == name)
    }

    pub fn last(&self, name: &str) -> Result<f64, LogError> {
        let i = self.index(name)?;
        self.rows.last().map(|r| r[i]).ok_or(LogError::Empty)
    }

    /// Writes the header and rows. Numbers use Rust's shortest round-trip
    /// formatting, so identical runs give identical bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LogError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        let mut buf = Vec::with_capacity(self.columns.len());
        for r in &self.rows {
            buf.clear();
            buf.extend(r.iter().map(|v| format!("{v}")));
            w.write_record(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), LogError> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, LogError> {
        let mut r = csv::Reader::from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let mut log = Self::new(columns);
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .enumerate()
                .map(|(i, v)| v.trim().parse::<f64>().map_err(|_| LogError::Parse { column: log.columns[i].clone(), value: v.into() }))
                .collect::<Result<Vec<_>, _>>()?;
            log.push(row)?;
        }
        Ok(log)
    }

    pub fn load_csv(path: &Path) -> Result<Self, LogError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
