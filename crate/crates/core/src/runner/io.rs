//! Embedding files and dataset export.
//!
//! Binary embedding layout (little-endian):
//!
//! ```text
//! magic    4 bytes "MFEM"
//! version  u32     1
//! rows     u32
//! cols     u32
//! payload  rows·cols f32, row-major
//! ```
//!
//! The CSV variant has one header row followed by one numeric row per sample.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::synthdata::Batch;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MFEM";
pub const EMBEDDING_VERSION: u32 = 1;

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn embedding_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn parse_embedding(buf: &[u8], path: &Path) -> Result<Matrix> {
    if buf.len() < 16 || &buf[..4] != EMBEDDING_MAGIC {
        return Err(format_error(path, "not an MFEM embedding file"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != EMBEDDING_VERSION {
        return Err(format_error(path, format!("unsupported version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let payload = &buf[16..];
    if payload.len() != rows * cols * 4 {
        return Err(format_error(
            path,
            format!("payload has {} bytes, expected {}", payload.len(), rows * cols * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn write_embedding(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, embedding_bytes(m))?;
    Ok(())
}

pub fn read_embedding_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(format_error(path, format!("row {} has {} cells", rows + 1, record.len())));
        }
        for cell in record.iter() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| format_error(path, format!("non-numeric cell {cell:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

pub fn write_embedding_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.cols()).map(|c| format!("d{c}")))?;
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an embedding, binary if the file starts with the MFEM magic,
/// otherwise CSV.
pub fn read_embedding(path: &Path) -> Result<Matrix> {
    let buf = fs::read(path)?;
    if buf.starts_with(EMBEDDING_MAGIC) {
        parse_embedding(&buf, path)
    } else {
        read_embedding_csv(path)
    }
}

/// Writes `x_v.mfem`, `x_t.mfem`, `h.mfem` and `labels.csv` into `dir`.
pub fn export_dataset(dir: &Path, data: &Batch) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_embedding(&dir.join("x_v.mfem"), &data.x_v)?;
    write_embedding(&dir.join("x_t.mfem"), &data.x_t)?;
    write_embedding(&dir.join("h.mfem"), &data.h)?;
    let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
    w.write_record(["label"])?;
    for l in &data.labels {
        w.write_record([l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn import_dataset(dir: &Path) -> Result<Batch> {
    let x_v = read_embedding(&dir.join("x_v.mfem"))?;
    let x_t = read_embedding(&dir.join("x_t.mfem"))?;
    let h = read_embedding(&dir.join("h.mfem"))?;
    let labels_path = dir.join("labels.csv");
    let labels = read_embedding_csv(&labels_path)?
        .as_slice()
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0u8),
            1.0 => Ok(1u8),
            _ => Err(format_error(&labels_path, format!("label {v} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Batch::new(x_v, x_t, h, labels)
}
