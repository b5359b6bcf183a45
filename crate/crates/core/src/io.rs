//! Prediction matrix files.
//!
//! Two encodings are accepted: CSV of decimals (one row per output) and the
//! `PMAT` binary layout: magic `PMAT`, `u32` LE rows, `u32` LE columns, then
//! `rows * cols` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const PMAT_MAGIC: &[u8; 4] = b"PMAT";

pub fn encode_pmat<T: Float>(m: &Matrix<T>) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Overflow("PMAT row count"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Overflow("PMAT column count"))?;
    let mut out = Vec::with_capacity(12 + 4 * m.as_slice().len());
    out.extend_from_slice(PMAT_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &x in m.as_slice() {
        let x = x.to_f32().unwrap_or(f32::NAN);
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_pmat(bytes: &[u8]) -> Result<Matrix<f32>> {
    if bytes.len() < 12 || &bytes[..4] != PMAT_MAGIC {
        return Err(Error::Pmat("missing PMAT magic or truncated header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12))
        .ok_or(Error::Overflow("PMAT payload size"))?;
    if bytes.len() != expected {
        return Err(Error::Pmat(format!(
            "{rows}x{cols} matrix needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

/// Parses headerless CSV; every record must have the same width.
pub fn parse_csv_matrix(text: &str) -> Result<Matrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("`{field}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub fn write_csv_matrix<T: Float + std::fmt::Display>(m: &Matrix<T>) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Decodes either encoding, sniffing the `PMAT` magic.
pub fn decode_predictions(bytes: &[u8]) -> Result<Matrix<f64>> {
    if bytes.starts_with(PMAT_MAGIC) {
        return Ok(decode_pmat(bytes)?.cast());
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Parse {
            line: 0,
            msg: "prediction file is neither PMAT nor UTF-8 CSV".into(),
        })?;
    parse_csv_matrix(text)
}

pub fn read_predictions(path: &Path) -> Result<Matrix<f64>> {
    decode_predictions(&read_bytes(path)?)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn write_pmat<T: Float>(path: &Path, m: &Matrix<T>) -> Result<()> {
    fs::write(path, encode_pmat(m)?).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}
