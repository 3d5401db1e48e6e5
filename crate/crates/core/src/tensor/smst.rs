//! The `SMST` binary tensor format.
//!
//! Layout, with no alignment padding anywhere:
//!
//! ```text
//! magic   4 bytes  "SMST"
//! version u8       1
//! dtype   u8       1 = f32, 2 = f64
//! ndim    u8
//! extents ndim x u64, little endian
//! payload row-major elements, little endian
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SMST";
pub const VERSION: u8 = 1;

/// Serialize to the wire layout.
pub fn to_bytes<E: Scalar>(t: &Tensor<E>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 8 * t.shape().len() + E::BYTE_WIDTH * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(E::DTYPE.code());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Dtype recorded in a serialized header, without decoding the payload.
pub fn peek_dtype(bytes: &[u8]) -> Result<DType> {
    if bytes.len() < 7 || &bytes[0..4] != MAGIC {
        return Err(Error::Format("not an SMST file".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported SMST version {}", bytes[4])));
    }
    DType::from_code(bytes[5]).ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[5])))
}

/// Decode a tensor, validating the header, the exact byte length and value
/// finiteness.
pub fn from_bytes<E: Scalar>(bytes: &[u8]) -> Result<Tensor<E>> {
    let dtype = peek_dtype(bytes)?;
    if dtype != E::DTYPE {
        return Err(Error::Format(format!(
            "file holds {dtype} but {} was requested",
            E::DTYPE
        )));
    }
    let ndim = bytes[6] as usize;
    let header = 7 + 8 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated SMST header".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 7 + 8 * i;
        let extent = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        shape.push(usize::try_from(extent).map_err(|_| Error::Format("extent overflow".into()))?);
    }
    let numel: usize = shape.iter().product();
    let expected = header + numel * E::BYTE_WIDTH;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload length mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(E::BYTE_WIDTH)
        .map(E::read_le)
        .collect();
    Tensor::new(shape, data)
}

pub fn write_file<E: Scalar>(path: &Path, t: &Tensor<E>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(t))?;
    Ok(())
}

pub fn read_file<E: Scalar>(path: &Path) -> Result<Tensor<E>> {
    from_bytes(&fs::read(path)?)
}

pub fn peek_file_dtype(path: &Path) -> Result<DType> {
    peek_dtype(&fs::read(path)?)
}
