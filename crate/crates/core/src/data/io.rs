//! LIBSVM and CSV readers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Dataset, Result};
use crate::autodiff::Tensor;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_libsvm(BufReader::new(file), stem(path))
}

/// Parses `label idx:val ...` lines. Labels `+1`/`1` are positive, `-1`/`0`
/// negative. Indices are 1-based; rows are zero-padded to the largest index
/// seen anywhere in the input.
pub fn parse_libsvm<R: BufRead>(reader: R, name: impl Into<String>) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut targets = Vec::new();
    let mut dim = 0;
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let err = |message: String| DataError::Parse {
            line: line_no,
            message,
        };
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = tokens.next().unwrap();
        let target = match label.parse::<f64>() {
            Ok(v) if v == 1.0 => true,
            Ok(v) if v == -1.0 || v == 0.0 => false,
            _ => return Err(err(format!("label {label:?} is not one of -1, 0, 1, +1"))),
        };
        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected index:value, found {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based; found 0".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad feature value {val:?}")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value {val}")));
            }
            dim = dim.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
        targets.push(target);
    }
    let mut data = vec![0.0; rows.len() * dim];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            data[i * dim + j] = v;
        }
    }
    Dataset::new(name, Tensor::matrix(rows.len(), dim, data), targets)
}

/// Writes labels as `+1`/`-1` and every non-zero value. The last feature is
/// always written so the dimension survives a reload.
pub fn write_libsvm(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let m = ds.dim();
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        for i in 0..ds.len() {
            write!(w, "{}", if ds.targets()[i] { "+1" } else { "-1" })?;
            for (j, &v) in ds.features().row(i).iter().enumerate() {
                if v != 0.0 || j + 1 == m {
                    write!(w, " {}:{}", j + 1, v)?;
                }
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_csv(file, target_column, stem(path))
}

/// Reads a numeric CSV with a header row. The target column is binarized
/// (`> 0` is positive); every other column becomes a feature.
pub fn parse_csv<R: Read>(reader: R, target_column: &str, name: impl Into<String>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(DataError::MissingHeader);
    }
    let target = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::UnknownColumn {
            name: target_column.to_string(),
            available: header.clone(),
        })?;
    let mut data = Vec::new();
    let mut targets = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| DataError::Parse {
            line: row + 1,
            message: e.to_string(),
        })?;
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| DataError::Cell {
                row,
                column: header[c].clone(),
                message: format!("{cell:?} is not a number"),
            })?;
            if !value.is_finite() {
                return Err(DataError::Cell {
                    row,
                    column: header[c].clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if c == target {
                targets.push(value > 0.0);
            } else {
                data.push(value);
            }
        }
    }
    let n = targets.len();
    Dataset::new(name, Tensor::matrix(n, header.len() - 1, data), targets)
}
