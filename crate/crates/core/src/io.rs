//! CSV readers and writers for edge lists, covariates, responses and survival data.
//!
//! Every file carries a header row. Parse failures report the 1-based line and
//! column of the offending field.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{NprError, Result};

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_err(path: &Path, line: u64, column: usize, message: impl Into<String>) -> NprError {
    NprError::Parse {
        path: path.display().to_string(),
        line: line as usize,
        column,
        message: message.into(),
    }
}

/// Table of numeric columns with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.header.len(), |i, j| self.rows[i][j])
    }
}

/// Reads a header-first CSV whose fields are all finite numbers.
pub fn read_table<R: Read>(reader: R, path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    read_records(&mut rdr, path)
}

fn read_records<R: Read>(rdr: &mut csv::Reader<R>, path: &Path) -> Result<Table> {
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(parse_err(path, 1, 1, "missing header row"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, 1, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                rec.len().min(header.len()) + 1,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, field)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(
                    path,
                    line,
                    c + 1,
                    format!("`{field}` is not a finite number"),
                )),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    read_records(&mut open(path)?, path)
}

/// Edge list with columns `src,dst` holding 0-based node indices.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut rdr = open(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["src", "dst"] {
        return Err(parse_err(
            path,
            1,
            1,
            format!("expected header `src,dst`, found `{}`", header.join(",")),
        ));
    }
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, 1, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(parse_err(
                path,
                line,
                rec.len().min(2) + 1,
                "expected 2 fields",
            ));
        }
        let idx = |c: usize| {
            rec[c].parse::<usize>().map_err(|_| {
                parse_err(
                    path,
                    line,
                    c + 1,
                    format!("`{}` is not a node index", &rec[c]),
                )
            })
        };
        edges.push((idx(0)?, idx(1)?));
    }
    Ok(edges)
}

/// Covariate matrix; one column per covariate.
pub fn read_covariates(path: &Path) -> Result<DMatrix<f64>> {
    let t = read_table_file(path)?;
    if t.rows.is_empty() {
        return Err(NprError::InvalidInput(format!(
            "{}: no covariate rows",
            path.display()
        )));
    }
    Ok(t.to_matrix())
}

/// A single numeric column: the only column of the file, or the one named `name`.
pub fn read_column(path: &Path, name: &str) -> Result<DVector<f64>> {
    let t = read_table_file(path)?;
    let col = if t.header.len() == 1 {
        t.rows.iter().map(|r| r[0]).collect()
    } else {
        t.column(name).ok_or_else(|| {
            parse_err(
                path,
                1,
                1,
                format!("no `{name}` column among `{}`", t.header.join(",")),
            )
        })?
    };
    Ok(DVector::from_vec(col))
}

/// Event indicators: each value must be 0 or 1.
pub fn read_events(path: &Path) -> Result<Vec<bool>> {
    let v = read_column(path, "event")?;
    v.iter()
        .enumerate()
        .map(|(i, &x)| match x {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(parse_err(
                path,
                i as u64 + 2,
                1,
                format!("event indicator {x} is not 0 or 1"),
            )),
        })
        .collect()
}

/// Writes a header and rows of numbers.
pub fn write_table<W: Write>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edges<W: Write>(out: W, edges: &[(usize, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["src", "dst"])?;
    for (s, d) in edges {
        w.write_record([s.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Covariates with headers `x1..xd`.
pub fn write_covariates<W: Write>(out: W, x: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        out,
        &header,
        x.row_iter().map(|r| r.iter().copied().collect()),
    )
}
