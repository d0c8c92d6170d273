//! Tabular reports. Every row carries the config hash, seed and crate version.

use std::io::Write;

use serde_json::{Map, Number, Value};

use crate::config::{ExperimentConfig, Format, Scenario};
use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv_text(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) => Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Bool(b) => Value::from(*b),
            Cell::Empty => Value::Null,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig, columns: &[&'static str]) -> Self {
        Self {
            scenario: config.scenario,
            config_hash: config.hash(),
            seed: config.seed,
            version: VERSION,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn columns(&self) -> &[&'static str] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    /// Values of one column, in row order.
    pub fn values(&self, name: &str) -> Vec<&Cell> {
        let k = self.column(name).expect("known column");
        self.rows.iter().map(|r| &r[k]).collect()
    }

    /// `false` when a `passed` column exists and any row holds `false`.
    pub fn all_passed(&self) -> bool {
        match self.column("passed") {
            Some(k) => self.rows.iter().all(|r| r[k] != Cell::Bool(false)),
            None => true,
        }
    }

    /// Whether any float cell is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.rows
            .iter()
            .flatten()
            .any(|c| matches!(c, Cell::Float(v) if !v.is_finite()))
    }

    pub fn write(&self, format: Format, out: impl Write) -> Result<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json => self.write_json(out),
        }
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["config_hash", "seed", "version"];
        header.extend(&self.columns);
        w.write_record(&header)?;
        let seed = self.seed.to_string();
        for row in &self.rows {
            let mut record = vec![
                self.config_hash.clone(),
                seed.clone(),
                self.version.to_string(),
            ];
            record.extend(row.iter().map(Cell::csv_text));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, mut out: impl Write) -> Result<()> {
        let records: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                obj.insert("config_hash".into(), Value::from(self.config_hash.as_str()));
                obj.insert("seed".into(), Value::from(self.seed));
                obj.insert("version".into(), Value::from(self.version));
                for (name, cell) in self.columns.iter().zip(row) {
                    obj.insert((*name).to_string(), cell.json());
                }
                Value::Object(obj)
            })
            .collect();
        serde_json::to_writer_pretty(&mut out, &records).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_bytes(&self, format: Format) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(format, &mut buf)?;
        Ok(buf)
    }
}
