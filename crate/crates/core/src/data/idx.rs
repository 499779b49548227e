use std::path::Path;

use super::{DataError, LabeledData};
use crate::nn::Matrix;

const UBYTE: u8 = 0x08;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic number {magic:#010x} at byte {offset}")]
    BadMagic { magic: u32, offset: usize },
    #[error("truncated input: needed {needed} bytes at byte {offset}, file has {len}")]
    Truncated {
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("{extra} unexpected trailing bytes at byte {offset}")]
    Trailing { offset: usize, extra: usize },
    #[error("{0}")]
    Mismatch(String),
}

/// Unsigned-byte IDX tensor: big-endian header `00 00 08 <ndim>`, one u32
/// per dimension, then the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        u32::from_be_bytes([0, 0, UBYTE, self.dims.len() as u8])
    }

    /// One flattened row per item, values scaled from `0..=255` to `[0, 1]`.
    pub fn to_features(&self) -> Result<Matrix, IdxError> {
        let n = *self.dims.first().ok_or_else(|| {
            IdxError::Mismatch("zero-dimensional IDX has no items".into())
        })? as usize;
        let width = self.dims[1..].iter().map(|&d| d as usize).product::<usize>();
        let data = self.data.iter().map(|&b| f64::from(b) / 255.0).collect();
        Matrix::from_vec(n, width, data).map_err(|e| IdxError::Mismatch(e.to_string()))
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    let need = |offset: usize, needed: usize| {
        if bytes.len() < offset + needed {
            Err(IdxError::Truncated {
                offset,
                needed,
                len: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(0, 4)?;
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let ndim = bytes[3] as usize;
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UBYTE || ndim == 0 {
        return Err(IdxError::BadMagic { magic, offset: 0 });
    }
    need(4, 4 * ndim)?;
    let dims: Vec<u32> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes(bytes[o..o + 4].try_into().expect("4 bytes"))
        })
        .collect();
    let header = 4 + 4 * ndim;
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| IdxError::Mismatch("dimension product overflows".into()))?;
    need(header, payload)?;
    if bytes.len() > header + payload {
        return Err(IdxError::Trailing {
            offset: header + payload,
            extra: bytes.len() - header - payload,
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn write_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic().to_be_bytes());
    for d in &array.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxArray, DataError> {
    let bytes = std::fs::read(path)?;
    Ok(parse_idx(&bytes)?)
}

/// Loads an image file (`0x00000803`-style, any rank >= 2) and a label file
/// (`0x00000801`). The class count is the largest label plus one.
pub fn load_idx_pair(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<LabeledData, DataError> {
    let img = load_idx(images)?;
    let lab = load_idx(labels)?;
    if img.dims.len() < 2 {
        return Err(IdxError::Mismatch("image file must have rank >= 2".into()).into());
    }
    if lab.dims.len() != 1 {
        return Err(IdxError::Mismatch("label file must have rank 1".into()).into());
    }
    if img.dims[0] != lab.dims[0] {
        return Err(IdxError::Mismatch(format!(
            "{} images but {} labels",
            img.dims[0], lab.dims[0]
        ))
        .into());
    }
    let features = img.to_features()?;
    let labels: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    LabeledData::new(features, labels, classes)
}
