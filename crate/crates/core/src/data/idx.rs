//! IDX arrays (the MNIST distribution format), optionally gzip-compressed.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use flate2::read::GzDecoder;

use super::RawDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Only unsigned bytes are supported.
const TYPE_U8: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse { offset, msg: msg.into() }
}

/// Parses an in-memory IDX buffer.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(parse_err(bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(0, format!("bad magic bytes {:02x} {:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != TYPE_U8 {
        return Err(parse_err(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(parse_err(3, "rank must be >= 1"));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(parse_err(bytes.len(), format!("truncated header, expected {header} bytes")));
    }
    let dims: Vec<usize> = (0..rank).map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..]) as usize).collect();
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| parse_err(4, "size overflow"))?;
    if dims[0] == 0 {
        return Err(parse_err(4, "array holds zero items"));
    }
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(parse_err(bytes.len(), format!("truncated payload, expected {count} bytes after the header")));
    }
    if payload.len() > count {
        return Err(parse_err(header + count, "trailing bytes after payload"));
    }
    Ok(IdxArray { dims, data: payload.to_vec() })
}

/// Reads a file, decompressing when it starts with the gzip magic.
pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let mut raw = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        raw = out;
    }
    parse_idx(&raw)
}

/// Images become rows with pixels mapped to `[0, 1]`. `C` is one more than
/// the largest label.
pub fn idx_to_dataset(images: &IdxArray, labels: &IdxArray) -> Result<RawDataset> {
    if labels.dims.len() != 1 {
        return Err(Error::InvalidInput(format!("label array must have rank 1, got {}", labels.dims.len())));
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::InvalidInput(format!("{n} images but {} labels", labels.dims[0])));
    }
    let d: usize = images.dims[1..].iter().product();
    let x = Matrix::from_vec(n, d, images.data.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let y: Vec<usize> = labels.data.iter().map(|&l| l as usize).collect();
    let c = y.iter().max().map_or(1, |m| m + 1);
    RawDataset::new_unchecked(x, y, c)
}

/// Loads an image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawDataset> {
    idx_to_dataset(&read_idx(images)?, &read_idx(labels)?)
}
