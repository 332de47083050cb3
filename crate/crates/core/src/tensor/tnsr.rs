//! TNSR raw tensor container.
//!
//! Record layout: magic `TNSR`, u8 dtype tag (0 = f32, 1 = f64), u8 rank,
//! `rank` little-endian u32 dims, then the little-endian payload. A file may
//! hold any number of consecutive records.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{check_dims, DType, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TNSR";

/// A tensor of either dtype, as read back from a container.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`, exactly when the stored dtype already is `T`.
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} exceeds 255", t.rank())));
    }
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.tag());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(t.len() * T::DTYPE.size());
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated {what}: expected {n} bytes, found {}", bytes.len())));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

/// Decodes one record from the front of `bytes`, advancing it.
pub fn decode(bytes: &mut &[u8]) -> Result<AnyTensor> {
    let magic = take(bytes, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let head = take(bytes, 2, "header")?;
    let dtype = DType::from_tag(head[0]).ok_or_else(|| Error::Format(format!("unknown dtype tag {}", head[0])))?;
    let rank = head[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = take(bytes, 4, "dims")?;
        shape.push(u32::from_le_bytes(d.try_into().unwrap()) as usize);
    }
    let n = check_dims(&shape)?;
    let payload = take(bytes, n * dtype.size(), "payload")?;
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(shape, payload.chunks_exact(4).map(f32::read_le).collect())?),
        DType::F64 => AnyTensor::F64(Tensor::new(shape, payload.chunks_exact(8).map(f64::read_le).collect())?),
    })
}

pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<AnyTensor>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        out.push(decode(&mut bytes)?);
    }
    Ok(out)
}

pub fn write_file<T: Real>(path: &Path, tensors: &[&Tensor<T>]) -> Result<()> {
    let mut buf = Vec::new();
    for t in tensors {
        encode(t, &mut buf)?;
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<AnyTensor>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_all(&buf)
}
