//! Binary parameter files.
//!
//! Layout: `b"PPRM"`, one endianness byte (`b'L'` or `b'B'`), `u32 D`,
//! `u32 C`, then `D·C` `f64` values in row-major order, all in the tagged
//! byte order. Files are always written little-endian.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::loss::ParamMatrix;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"PPRM";
const HEADER: usize = 13;

pub fn encode_params<T: Scalar>(theta: &ParamMatrix<T>) -> Vec<u8> {
    let (d, c) = (theta.dim(), theta.n_classes());
    let mut out = Vec::with_capacity(HEADER + 8 * d * c);
    out.extend_from_slice(MAGIC);
    out.push(b'L');
    let mut buf = [0u8; 8];
    LittleEndian::write_u32(&mut buf, d as u32);
    out.extend_from_slice(&buf[..4]);
    LittleEndian::write_u32(&mut buf, c as u32);
    out.extend_from_slice(&buf[..4]);
    for v in theta.matrix().as_slice() {
        LittleEndian::write_f64(&mut buf, v.as_f64());
        out.extend_from_slice(&buf);
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamMatrix<f64>> {
    let err = |offset: usize, msg: &str| Error::Parse { offset, msg: msg.into() };
    if bytes.len() < HEADER {
        return Err(err(bytes.len(), "truncated parameter header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, "bad magic, expected PPRM"));
    }
    let (read_u32, read_f64): (fn(&[u8]) -> u32, fn(&[u8]) -> f64) = match bytes[4] {
        b'L' => (LittleEndian::read_u32, LittleEndian::read_f64),
        b'B' => (BigEndian::read_u32, BigEndian::read_f64),
        _ => return Err(err(4, "unknown endianness tag")),
    };
    let d = read_u32(&bytes[5..]) as usize;
    let c = read_u32(&bytes[9..]) as usize;
    if d == 0 || c == 0 {
        return Err(err(5, "zero dimension"));
    }
    let want = d.checked_mul(c).and_then(|n| n.checked_mul(8)).ok_or_else(|| err(5, "dimension overflow"))?;
    let body = &bytes[HEADER..];
    if body.len() != want {
        return Err(err(HEADER + body.len().min(want), &format!("expected {want} payload bytes, found {}", body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(read_f64).collect();
    ParamMatrix::from_matrix(Matrix::from_vec(d, c, values)?)
}

pub fn write_params<T: Scalar>(theta: &ParamMatrix<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_params(theta)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<ParamMatrix<f64>> {
    decode_params(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let theta = ParamMatrix::from_matrix(Matrix::from_fn(3, 2, |i, j| i as f64 - 0.25 * j as f64)).unwrap();
        assert_eq!(decode_params(&encode_params(&theta)).unwrap(), theta);
    }

    #[test]
    fn reads_big_endian() {
        let mut b = b"PPRMB".to_vec();
        b.extend_from_slice(&[0, 0, 0, 1, 0, 0, 0, 2]);
        b.extend_from_slice(&1.5f64.to_be_bytes());
        b.extend_from_slice(&(-2.0f64).to_be_bytes());
        let t = decode_params(&b).unwrap();
        assert_eq!(t.matrix().as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn rejects_corruption() {
        let theta = ParamMatrix::<f64>::zeros(2, 2);
        let good = encode_params(&theta);
        assert!(matches!(decode_params(&good[..good.len() - 1]), Err(Error::Parse { .. })));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_params(&bad), Err(Error::Parse { offset: 0, .. })));
        let mut bad = good;
        bad[4] = b'?';
        assert!(matches!(decode_params(&bad), Err(Error::Parse { offset: 4, .. })));
    }
}
