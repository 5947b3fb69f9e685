//! On-disk conventions shared by model artifacts.
//!
//! Matrices are flat little-endian `f32` arrays, row-major, with their shape
//! recorded in the owning `meta.json`. JSON documents are pretty-printed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

pub fn write_f32_matrix(
    dir: &Path,
    file: &str,
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<MatrixMeta> {
    assert_eq!(
        data.len(),
        rows * cols,
        "matrix shape does not match data length"
    );
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let path = dir.join(file);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(MatrixMeta {
        file: file.to_string(),
        rows,
        cols,
    })
}

pub fn read_f32_matrix(dir: &Path, meta: &MatrixMeta, producer: &'static str) -> Result<Vec<f64>> {
    let path = dir.join(&meta.file);
    let bytes = read_bytes(&path, producer)?;
    if bytes.len() != meta.rows * meta.cols * 4 {
        return Err(Error::CorruptArtifact {
            path,
            message: format!(
                "expected {} bytes for a {}x{} matrix, found {}",
                meta.rows * meta.cols * 4,
                meta.rows,
                meta.cols,
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Rounds through `f32` so in-memory values match what a reload would see.
pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

pub fn read_bytes(path: &Path, producer: &'static str) -> Result<Vec<u8>> {
    let mut file = fs::File::open(path).map_err(|e| missing_or_io(path, e, producer))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn read_text(path: &Path, producer: &'static str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| missing_or_io(path, e, producer))
}

fn missing_or_io(path: &Path, e: std::io::Error, producer: &'static str) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        }
    } else {
        Error::io(path, e)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<T> {
    let text = read_text(path, producer)?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn create_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}
