use std::path::Path;

use crate::error::{FormatError, Result};
use crate::netgraph::Model;
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VWT1";

/// A decoded tensor in the precision it was stored with.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

pub fn encode_checkpoint<T: Scalar>(tensors: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.push(dtype_tag(T::DTYPE));
        for v in t.data() {
            match T::DTYPE {
                DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Vec<(String, StoredTensor)>, FormatError> {
    if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| FormatError::InvalidName)?.to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::new();
        let mut len: usize = 1;
        for _ in 0..rank {
            let e = usize::try_from(r.u64()?).map_err(|_| FormatError::ExtentOverflow)?;
            len = len.checked_mul(e).ok_or(FormatError::ExtentOverflow)?;
            shape.push(e);
        }
        let tag = r.u8()?;
        let size = match tag {
            0 => 4,
            1 => 8,
            other => return Err(FormatError::UnknownDtype(other)),
        };
        let raw = r.take(len.checked_mul(size).ok_or(FormatError::ExtentOverflow)?)?;
        let tensor = if tag == 0 {
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            StoredTensor::F32(Tensor::new(&shape, data).map_err(|_| FormatError::ExtentOverflow)?)
        } else {
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            StoredTensor::F64(Tensor::new(&shape, data).map_err(|_| FormatError::ExtentOverflow)?)
        };
        out.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(tensors: &[(String, Tensor<T>)], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(tensors))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, StoredTensor)>> {
    Ok(decode_checkpoint(&std::fs::read(path)?)?)
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint(&model.state(), path)
}

/// Loads a checkpoint into `model`, validating every name and shape.
pub fn load_model<T: Scalar>(model: &mut Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let tensors = load_checkpoint(path)?;
    model.load_state(tensors.into_iter().map(|(n, t)| (n, t.cast())).collect())
}
