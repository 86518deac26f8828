//! Plain CSV helpers shared by the file formats.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `id,<column names...>` followed by one row per id.
pub fn write_matrix_csv(
    path: &Path,
    ids: &[String],
    names: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    if ids.len() != m.nrows() || names.len() != m.ncols() {
        return Err(Error::domain(format!(
            "matrix is {}x{} but {} ids and {} column names were given",
            m.nrows(),
            m.ncols(),
            ids.len(),
            names.len()
        )));
    }
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        write!(w, "id")?;
        for name in names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (i, id) in ids.iter().enumerate() {
            write!(w, "{}", csv_field(id))?;
            for j in 0..m.ncols() {
                write!(w, ",{}", m[(i, j)])?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`write_matrix_csv`]; returns ids, column names and values.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "id" {
        return Err(Error::Format {
            line: 1,
            message: "expected header `id,<columns...>`".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let d = names.len();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Format {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != d + 1 {
            return Err(Error::Format {
                line,
                message: format!("expected {} fields, found {}", d + 1, rec.len()),
            });
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Conflict(format!(
                "duplicate id `{id}` at line {line}"
            )));
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Format {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            values.push(v);
        }
        ids.push(id);
    }
    let m = DMatrix::from_row_slice(ids.len(), d, &values);
    Ok((ids, names, m))
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
