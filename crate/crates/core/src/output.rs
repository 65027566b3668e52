//! CSV time-series output.
//!
//! The first column is always `t`. Complex series become two columns,
//! `name_re` and `name_im`. Numbers are written in scientific notation with
//! 17 significant digits, which round-trips every `f64` exactly, and rows
//! end in `\n`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::qstate::C64;

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::Real(v) => v.len(),
            Values::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Values,
}

impl TimeSeries {
    pub fn real(name: impl Into<String>, times: &[f64], values: Vec<f64>) -> Self {
        Self { name: name.into(), times: times.to_vec(), values: Values::Real(values) }
    }

    pub fn complex(name: impl Into<String>, times: &[f64], values: Vec<C64>) -> Self {
        Self { name: name.into(), times: times.to_vec(), values: Values::Complex(values) }
    }
}

pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header and rows for `series`, which must share one time grid.
pub fn csv_records(series: &[TimeSeries]) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut header = vec!["t".to_string()];
    let Some(first) = series.first() else {
        return Ok((header, Vec::new()));
    };
    for s in series {
        if s.values.len() != s.times.len() {
            return Err(Error::Domain(format!("series {} has {} values for {} times", s.name, s.values.len(), s.times.len())));
        }
        if s.times != first.times {
            return Err(Error::Domain(format!("series {} and {} have different time grids", s.name, first.name)));
        }
        match s.values {
            Values::Real(_) => header.push(s.name.clone()),
            Values::Complex(_) => {
                header.push(format!("{}_re", s.name));
                header.push(format!("{}_im", s.name));
            }
        }
    }
    let rows = first
        .times
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut row = vec![format_number(*t)];
            for s in series {
                match &s.values {
                    Values::Real(v) => row.push(format_number(v[i])),
                    Values::Complex(v) => {
                        row.push(format_number(v[i].re));
                        row.push(format_number(v[i].im));
                    }
                }
            }
            row
        })
        .collect();
    Ok((header, rows))
}

pub fn write_csv<W: Write>(series: &[TimeSeries], out: W) -> Result<()> {
    let (header, rows) = csv_records(series)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for r in &rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(series: &[TimeSeries], path: &Path) -> Result<()> {
    csv_records(series)?;
    write_csv(series, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Parses a file written by [`emit_csv`] into its header and numeric rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let header = r.headers().map_err(|e| Error::Io(std::io::Error::other(e)))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Domain(format!("bad number {f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
