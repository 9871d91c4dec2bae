//! Delimited text matrices: one subject per row, one voxel per column.
//!
//! Comma or tab separated (detected from the first line). The first row is
//! taken as a header when none of its cells parses as a number. Floats are
//! written with Rust's shortest round-trip formatting, so a write/read cycle
//! is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SubjectContrasts;

fn detect_delimiter(path: &Path) -> Result<u8> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    Ok(if first.contains('\t') { b'\t' } else { b',' })
}

/// Rows of a table plus its header, if it had one.
pub type Table = (Vec<Vec<f64>>, Option<Vec<String>>);

/// Reads a real matrix; returns the rows and the optional header.
pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let delimiter = detect_delimiter(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut header = None;
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        if k == 0 && record.iter().all(|c| c.parse::<f64>().is_err()) {
            header = Some(record.iter().map(str::to_owned).collect());
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            // Trailing blank line.
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Matrix {
                path: path.to_owned(),
                row: line,
                col: record.len().min(w) + 1,
                message: format!("expected {w} columns, found {}", record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| parse_cell(path, line, c + 1, cell))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((rows, header))
}

fn parse_cell(path: &Path, row: usize, col: usize, cell: &str) -> Result<f64> {
    let fail = |message: String| Error::Matrix {
        path: path.to_owned(),
        row,
        col,
        message,
    };
    if cell.is_empty() {
        return Err(fail("blank cell".into()));
    }
    let v: f64 = cell.parse().map_err(|_| fail(format!("not a number: '{cell}'")))?;
    if !v.is_finite() {
        return Err(fail(format!("non-finite value '{cell}'")));
    }
    Ok(v)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (row, col) = e.position().map_or((0, 0), |p| (p.line() as usize, 0));
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Matrix {
            path: path.to_owned(),
            row,
            col,
            message: format!("{other:?}"),
        },
    }
}

/// Subjects-by-voxels contrast matrix.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<SubjectContrasts> {
    let path = path.as_ref();
    let (rows, _) = read_table(path)?;
    if rows.is_empty() {
        return Err(Error::Matrix {
            path: path.to_owned(),
            row: 1,
            col: 1,
            message: "no data rows".into(),
        });
    }
    SubjectContrasts::from_rows(&rows)
}

pub fn write_table(path: impl AsRef<Path>, rows: &[Vec<f64>], header: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    if let Some(h) = header {
        writeln!(out, "{}", h.join(",")).map_err(io)?;
    }
    let mut line = String::new();
    for row in rows {
        line.clear();
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_matrix(path: impl AsRef<Path>, contrasts: &SubjectContrasts) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..contrasts.subjects()).map(|j| contrasts.row(j).to_vec()).collect();
    write_table(path, &rows, None)
}
