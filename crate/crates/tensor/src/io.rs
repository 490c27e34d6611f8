//! MMT1 binary tensor container.
//!
//! Layout: `b"MMT1"`, u8 dtype code (0 = f32, 1 = f64), u8 rank,
//! `rank` little-endian u64 extents, then the raw little-endian values.

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"MMT1";

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + T::BYTES * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::DTYPE_CODE);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.to_le(&mut out);
    }
    out
}

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(&encode(t))?;
    Ok(())
}

/// Dtype code and shape read from an MMT1 header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub dtype: u8,
    pub shape: Vec<usize>,
}

impl Header {
    pub fn byte_len(&self) -> usize {
        let width = if self.dtype == 0 { 4 } else { 8 };
        6 + 8 * self.shape.len() + width * numel(&self.shape)
    }
}

pub fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != TENSOR_MAGIC {
        return Err(TensorError::Format(format!("bad magic {:?}", &head[..4])));
    }
    let dtype = head[4];
    if dtype > 1 {
        return Err(TensorError::Format(format!("unknown dtype code {dtype}")));
    }
    let mut shape = Vec::with_capacity(head[5] as usize);
    for _ in 0..head[5] {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    Ok(Header { dtype, shape })
}

/// Reads one tensor; the stored dtype must be `T`.
pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let header = read_header(r)?;
    if header.dtype != T::DTYPE_CODE {
        return Err(TensorError::Format(format!(
            "stored dtype code {} but {} requested",
            header.dtype,
            T::NAME
        )));
    }
    let n = numel(&header.shape);
    let mut raw = vec![0u8; n * T::BYTES];
    r.read_exact(&mut raw)?;
    let data = raw.chunks_exact(T::BYTES).map(T::from_le).collect();
    Tensor::new(header.shape, data)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    read_tensor(&mut &bytes[..])
}

pub fn save<T: Scalar>(path: impl AsRef<std::path::Path>, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode(t))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<std::path::Path>) -> Result<Tensor<T>> {
    decode(&std::fs::read(path)?)
}
