//! IDX files (the MNIST distribution format): big-endian, unsigned bytes.

use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use super::data::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic 0x{found:08x} at offset {offset}, expected 0x{expected:08x}")]
    BadMagic {
        expected: u32,
        found: u32,
        offset: usize,
    },
    #[error("file truncated: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let b = bytes.get(offset..offset + 4).ok_or(IdxError::Truncated {
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic {
            expected,
            found,
            offset: 0,
        });
    }
    Ok(())
}

/// Images as `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), IdxError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(IdxError::Truncated {
            expected: need,
            found: bytes.len(),
        });
    }
    Ok((n, rows, cols, &bytes[16..need]))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let need = 8 + n;
    if bytes.len() < need {
        return Err(IdxError::Truncated {
            expected: need,
            found: bytes.len(),
        });
    }
    Ok(&bytes[8..need])
}

/// Build a dataset from image and label file contents. Pixels are scaled to
/// `[0, 1]`; each image is flattened row-major.
pub fn decode_idx(images: &[u8], labels: &[u8]) -> Result<Dataset, IdxError> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let dim = rows * cols;
    let features = DMatrix::from_fn(n, dim, |i, j| pixels[i * dim + j] as f64 / 255.0);
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Ok(Dataset {
        features,
        labels,
        classes,
    })
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, IdxError> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| IdxError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    decode_idx(&read(images)?, &read(labels)?)
}

/// Encode images (`count × rows × cols` bytes, row-major).
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
