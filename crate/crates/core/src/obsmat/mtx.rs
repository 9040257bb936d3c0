//! Matrix Market `coordinate real general` reader and writer.
//!
//! Indices are 1-based on disk and 0-based in memory. Values are written with
//! 17 significant digits so a write/read cycle reproduces every bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Entry, ObservedMatrix};
use crate::error::{Result, RmcError};

pub const MATRIX_MARKET_HEADER: &str = "%%MatrixMarket matrix coordinate real general";

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> RmcError {
    RmcError::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses coordinate data from any reader; `source` labels error messages.
/// Returns the declared shape and the entries in file order.
pub fn parse_matrix_market<R: BufRead>(
    reader: R,
    source: &str,
) -> Result<(usize, usize, Vec<Entry>)> {
    let mut lines = reader.lines().enumerate();
    let io_err = |e| RmcError::io(source, e);

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(source, 1, "empty file"))?;
    let header = header.map_err(io_err)?;
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if tokens.first().map(String::as_str) != Some("%%matrixmarket") {
        return Err(parse_err(source, 1, "missing %%MatrixMarket banner"));
    }
    if tokens.len() != 5 || tokens[1] != "matrix" {
        return Err(parse_err(source, 1, "malformed header"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(
            source,
            1,
            format!("unsupported format '{}', expected coordinate", tokens[2]),
        ));
    }
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(parse_err(
            source,
            1,
            format!("unsupported field '{}', expected real", tokens[3]),
        ));
    }
    if tokens[4] != "general" {
        return Err(parse_err(
            source,
            1,
            format!("unsupported symmetry '{}', expected general", tokens[4]),
        ));
    }

    let mut shape: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(io_err)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match shape {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err(source, lineno, "size line needs 'rows cols nnz'"));
                }
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| parse_err(source, lineno, format!("bad integer '{s}'")))
                };
                let (m, n, nnz) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                if m == 0 || n == 0 {
                    return Err(parse_err(source, lineno, "matrix dimensions must be positive"));
                }
                shape = Some((m, n, nnz));
                entries.reserve(nnz);
            }
            Some((m, n, nnz)) => {
                if fields.len() != 3 {
                    return Err(parse_err(source, lineno, "entry line needs 'row col value'"));
                }
                if entries.len() == nnz {
                    return Err(parse_err(
                        source,
                        lineno,
                        format!("more entries than the declared {nnz}"),
                    ));
                }
                let idx = |s: &str, bound: usize, what: &str| -> Result<usize> {
                    let v = s.parse::<usize>().map_err(|_| {
                        parse_err(source, lineno, format!("bad {what} index '{s}'"))
                    })?;
                    if v == 0 || v > bound {
                        return Err(parse_err(
                            source,
                            lineno,
                            format!("{what} index {v} out of bounds 1..={bound}"),
                        ));
                    }
                    Ok(v - 1)
                };
                let row = idx(fields[0], m, "row")?;
                let col = idx(fields[1], n, "column")?;
                let value = fields[2]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        parse_err(source, lineno, format!("bad value '{}'", fields[2]))
                    })?;
                entries.push(Entry { row, col, value });
            }
        }
    }
    let (m, n, nnz) = shape.ok_or_else(|| parse_err(source, 1, "missing size line"))?;
    if entries.len() != nnz {
        return Err(parse_err(
            source,
            0,
            format!("declared {nnz} entries, found {}", entries.len()),
        ));
    }
    Ok((m, n, entries))
}

/// Reads raw coordinate triplets (shape plus entries) from a file.
pub fn read_triplets(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Entry>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| RmcError::io(path, e))?;
    parse_matrix_market(BufReader::new(file), &path.display().to_string())
}

/// Reads a file into an [`ObservedMatrix`]. Duplicate coordinates are rejected.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<ObservedMatrix> {
    let (m, n, entries) = read_triplets(path)?;
    ObservedMatrix::from_entries(m, n, entries)
}

/// Writes coordinate triplets with the fixed header.
pub fn write_triplets(path: impl AsRef<Path>, m: usize, n: usize, entries: &[Entry]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| RmcError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{MATRIX_MARKET_HEADER}")?;
        writeln!(w, "{m} {n} {}", entries.len())?;
        for e in entries {
            writeln!(w, "{} {} {:.16e}", e.row + 1, e.col + 1, e.value)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| RmcError::io(path, e))
}

pub fn write_matrix_market(obs: &ObservedMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_triplets(path, obs.nrows(), obs.ncols(), obs.entries())
}
