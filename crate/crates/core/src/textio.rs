//! Plain-text formats: dense arrays and `key = value` manifests.
//!
//! Dense arrays start with a `rows cols` line followed by one whitespace-separated
//! line per row. Floats are always printed with 17 significant digits.

use std::fs;
use std::path::Path;

use crate::densela::Matrix;
use crate::error::{Result, RmcError};

/// Formats a float with 17 significant digits (exact round trip).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dense(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(m.rows() * m.cols() * 24 + 16);
    out.push_str(&format!("{} {}\n", m.rows(), m.cols()));
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| RmcError::io(path, e))
}

pub fn read_dense(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| RmcError::io(path, e))?;
    let source = path.display().to_string();
    let perr = |line: usize, message: String| RmcError::Parse {
        path: source.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, shape) = lines
        .next()
        .ok_or_else(|| perr(1, "empty dense array file".into()))?;
    let dims: Vec<usize> = shape
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| perr(1, format!("bad shape line '{shape}'")))?;
    if dims.len() != 2 {
        return Err(perr(1, "shape line needs 'rows cols'".into()));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for (idx, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .map_err(|_| perr(idx + 1, format!("bad value '{tok}'")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(perr(
                idx + 1,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
    }
    if data.len() != rows * cols {
        return Err(perr(0, format!("expected {rows} rows")));
    }
    Matrix::from_vec(rows, cols, data)
}

/// Writes a vector as an `n x 1` dense array.
pub fn write_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    write_dense(path, &Matrix::from_vec(v.len(), 1, v.to_vec())?)
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let m = read_dense(path)?;
    if m.cols() != 1 {
        return Err(RmcError::InvalidArgument(format!(
            "expected a column vector, found {} columns",
            m.cols()
        )));
    }
    Ok(m.into_vec())
}

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(pub Vec<(String, String)>);

impl KeyValues {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| RmcError::InvalidArgument(format!("manifest key '{key}' missing")))?;
        raw.parse::<T>().map_err(|_| {
            RmcError::InvalidArgument(format!("manifest key '{key}' has bad value '{raw}'"))
        })
    }

    pub fn render(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| RmcError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<KeyValues> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RmcError::io(path, e))?;
        let mut kv = KeyValues::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| RmcError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: "expected 'key = value'".into(),
            })?;
            kv.push(k.trim(), v.trim());
        }
        Ok(kv)
    }
}
