//! Tabular datasets and CSV interchange.
//!
//! CSV files carry a header row. Covariate columns are every column except the
//! outcome column (default `y`). Rows with a missing covariate (`""`, `NA`,
//! `NaN`) are dropped and the count is logged.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{DucError, Result};

pub const OUTCOME_COLUMN: &str = "y";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    /// `n x L` covariate matrix.
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: DMatrix<f64>, y: Option<DVector<f64>>) -> Result<Self> {
        if names.len() != x.ncols() {
            return Err(DucError::dim(format!(
                "{} column names for {} covariate columns",
                names.len(),
                x.ncols()
            )));
        }
        if let Some(y) = &y {
            if y.len() != x.nrows() {
                return Err(DucError::dim(format!(
                    "outcome has {} rows, covariates have {}",
                    y.len(),
                    x.nrows()
                )));
            }
        }
        Ok(Self { names, x, y })
    }

    /// Covariate-only dataset with default names `x1..xL`.
    pub fn from_covariates(x: DMatrix<f64>) -> Self {
        let names = default_names(x.ncols());
        Self { names, x, y: None }
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn outcome(&self) -> Result<&DVector<f64>> {
        self.y.as_ref().ok_or_else(|| DucError::Schema("dataset has no outcome column".into()))
    }

    /// Select rows by index (duplicates allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows.iter());
        let y = self.y.as_ref().map(|y| y.select_rows(rows.iter()));
        Dataset { names: self.names.clone(), x, y }
    }

    /// Stack datasets with identical covariate columns.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| DucError::EmptyDataset("nothing to concatenate".into()))?;
        let p = first.n_covariates();
        let n: usize = parts.iter().map(|d| d.n_rows()).sum();
        let with_y = parts.iter().all(|d| d.y.is_some());
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(if with_y { n } else { 0 });
        let mut offset = 0;
        for d in parts {
            if d.n_covariates() != p {
                return Err(DucError::dim(format!(
                    "cannot stack {} covariates onto {}",
                    d.n_covariates(),
                    p
                )));
            }
            x.rows_mut(offset, d.n_rows()).copy_from(&d.x);
            if with_y {
                y.rows_mut(offset, d.n_rows()).copy_from(d.y.as_ref().unwrap());
            }
            offset += d.n_rows();
        }
        Ok(Dataset { names: first.names.clone(), x, y: with_y.then_some(y) })
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers.is_empty() {
            return Err(DucError::Schema("CSV header row is empty".into()));
        }
        let y_col = headers.iter().position(|h| h == OUTCOME_COLUMN);
        let cov_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != y_col).collect();
        if cov_cols.is_empty() {
            return Err(DucError::Schema("CSV has no covariate columns".into()));
        }

        let mut values = Vec::new();
        let mut ys = Vec::new();
        let mut dropped = 0usize;
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != headers.len() {
                return Err(DucError::Data {
                    line,
                    column: "*".into(),
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            let mut row = Vec::with_capacity(cov_cols.len());
            let mut missing = false;
            for &c in &cov_cols {
                match parse_cell(&record[c]) {
                    Cell::Value(v) => row.push(v),
                    Cell::Missing => missing = true,
                    Cell::Invalid => {
                        return Err(DucError::Data {
                            line,
                            column: headers[c].clone(),
                            message: format!("cannot parse {:?} as a number", &record[c]),
                        })
                    }
                }
            }
            let yv = match y_col {
                Some(c) => match parse_cell(&record[c]) {
                    Cell::Value(v) => Some(v),
                    Cell::Missing => {
                        missing = true;
                        None
                    }
                    Cell::Invalid => {
                        return Err(DucError::Data {
                            line,
                            column: headers[c].clone(),
                            message: format!("cannot parse {:?} as a number", &record[c]),
                        })
                    }
                },
                None => None,
            };
            if missing {
                dropped += 1;
                continue;
            }
            values.extend(row);
            if let Some(v) = yv {
                ys.push(v);
            }
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} rows with missing values");
        }
        let n = values.len() / cov_cols.len();
        let x = DMatrix::from_row_slice(n, cov_cols.len(), &values);
        let names = cov_cols.iter().map(|&c| headers[c].clone()).collect();
        let y = y_col.map(|_| DVector::from_vec(ys));
        Dataset::new(names, x, y)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        if self.y.is_some() {
            header.push(OUTCOME_COLUMN);
        }
        wtr.write_record(&header)?;
        let mut buf = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            buf.clear();
            for j in 0..self.n_covariates() {
                buf.push(format_value(self.x[(i, j)]));
            }
            if let Some(y) = &self.y {
                buf.push(format_value(y[i]));
            }
            wtr.write_record(&buf)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

enum Cell {
    Value(f64),
    Missing,
    Invalid,
}

fn parse_cell(s: &str) -> Cell {
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Cell::Missing;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        _ => Cell::Invalid,
    }
}

/// Shortest representation that round-trips exactly.
fn format_value(v: f64) -> String {
    format!("{v:?}")
}
