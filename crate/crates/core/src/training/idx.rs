//! Reader for the IDX tensor format (MNIST-style image and label files).
//!
//! Layout: two zero bytes, a type code, a dimension count, one big-endian
//! `u32` per dimension, then the payload in big-endian element order. Input
//! that starts with the gzip magic is inflated first.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Upper bound on inflated input, guarding against decompression bombs.
pub const MAX_IDX_BYTES: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxType {
    U8,
    I8,
    I16,
    I32,
    F32,
    F64,
}

impl IdxType {
    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0x08 => IdxType::U8,
            0x09 => IdxType::I8,
            0x0B => IdxType::I16,
            0x0C => IdxType::I32,
            0x0D => IdxType::F32,
            0x0E => IdxType::F64,
            other => return Err(Error::Idx(format!("unknown type code 0x{other:02x}"))),
        })
    }

    pub fn size(self) -> usize {
        match self {
            IdxType::U8 | IdxType::I8 => 1,
            IdxType::I16 => 2,
            IdxType::I32 | IdxType::F32 => 4,
            IdxType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dtype: IdxType,
    pub dims: Vec<usize>,
    payload: Vec<u8>,
}

impl IdxArray {
    pub fn len(&self) -> usize {
        self.payload.len() / self.dtype.size()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    /// Element `i` of the flattened payload.
    pub fn get(&self, i: usize) -> f64 {
        let s = self.dtype.size();
        let b = &self.payload[i * s..(i + 1) * s];
        match self.dtype {
            IdxType::U8 => b[0] as f64,
            IdxType::I8 => b[0] as i8 as f64,
            IdxType::I16 => i16::from_be_bytes([b[0], b[1]]) as f64,
            IdxType::I32 => i32::from_be_bytes([b[0], b[1], b[2], b[3]]) as f64,
            IdxType::F32 => f32::from_be_bytes([b[0], b[1], b[2], b[3]]) as f64,
            IdxType::F64 => f64::from_be_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

fn inflate_if_gzipped(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .take(MAX_IDX_BYTES + 1)
            .read_to_end(&mut out)
            .map_err(|e| Error::Idx(format!("gzip: {e}")))?;
        if out.len() as u64 > MAX_IDX_BYTES {
            return Err(Error::Idx("inflated data exceeds size limit".into()));
        }
        Ok(std::borrow::Cow::Owned(out))
    } else {
        Ok(std::borrow::Cow::Borrowed(bytes))
    }
}

/// Decodes one IDX blob, gzip-compressed or raw.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let bytes = inflate_if_gzipped(bytes)?;
    if bytes.len() < 4 {
        return Err(Error::Idx(format!("header needs 4 bytes, got {}", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx("magic must start with two zero bytes".into()));
    }
    let dtype = IdxType::from_code(bytes[2])?;
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Idx("zero dimensions".into()));
    }
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(Error::Idx(format!(
            "header declares {ndims} dimensions but input is {} bytes",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx("declared size overflows".into()))?;
    let payload = &bytes[header_len..];
    if payload.len() != expected {
        return Err(Error::Idx(format!(
            "dims {dims:?} need {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    Ok(IdxArray {
        dtype,
        dims,
        payload: payload.to_vec(),
    })
}

pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Builds a dataset from an image tensor `(n, d1, d2, ...)` and a label vector `(n)`.
///
/// `u8` images are scaled to `[0, 1]`. Labels must be non-negative integers;
/// the class count is `max(label) + 1`, at least 2. `limit` keeps the first
/// rows only.
pub fn idx_to_dataset(images: &IdxArray, labels: &IdxArray, limit: Option<usize>) -> Result<Dataset> {
    if images.dims.len() < 2 {
        return Err(Error::Idx("image tensor needs at least 2 dimensions".into()));
    }
    if labels.dims.len() != 1 {
        return Err(Error::Idx("label tensor must be one-dimensional".into()));
    }
    if images.dims[0] != labels.dims[0] {
        return Err(Error::Idx(format!(
            "{} images but {} labels",
            images.dims[0], labels.dims[0]
        )));
    }
    let n = limit.map_or(images.dims[0], |l| l.min(images.dims[0]));
    let features: usize = images.dims[1..].iter().product();
    if n == 0 || features == 0 {
        return Err(Error::Idx("empty image tensor".into()));
    }
    let scale = if images.dtype == IdxType::U8 { 1.0 / 255.0 } else { 1.0 };
    let rows: Vec<f64> = (0..n * features).map(|i| images.get(i) * scale).collect();

    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let y = labels.get(i);
        if !(y >= 0.0) || y.fract() != 0.0 || y > u16::MAX as f64 {
            return Err(Error::Idx(format!("label {y} at row {i} is not a class index")));
        }
        ys.push(y as usize);
    }
    let classes = ys.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(rows, features, ys, classes)
}

pub fn load_idx_dataset(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    idx_to_dataset(&read_idx_file(images)?, &read_idx_file(labels)?, limit)
}

/// Serializes `u8` data in IDX layout; used to write fixtures.
pub fn encode_idx_u8(dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}
