use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::{Scalar, Tensor};

pub const VOXEL_MAGIC: [u8; 4] = *b"VOX3";
pub const VOXEL_VERSION: u8 = 1;
pub const RESOLUTIONS: [usize; 4] = [8, 16, 32, 64];

const DTYPE_BINARY: u8 = 0;
const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 8;

/// Cubic occupancy grid indexed `(d, h, w)`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    values: Vec<f32>,
}

fn check_resolution(resolution: usize) -> Result<()> {
    if RESOLUTIONS.contains(&resolution) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("voxel resolution must be one of {RESOLUTIONS:?}, got {resolution}")))
    }
}

impl VoxelGrid {
    pub fn new(resolution: usize, values: Vec<f32>) -> Result<Self> {
        check_resolution(resolution)?;
        if values.len() != resolution.pow(3) {
            return Err(Error::InvalidShape(format!(
                "{} values for a {resolution}^3 grid",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FormatError::InvalidValue(bad).into());
        }
        Ok(Self { resolution, values })
    }

    pub fn empty(resolution: usize) -> Result<Self> {
        Self::new(resolution, vec![0.0; resolution.pow(3)])
    }

    /// Occupancy from a predicate on voxel indices `(d, h, w)`.
    pub fn from_fn(resolution: usize, mut occupied: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        check_resolution(resolution)?;
        let r = resolution;
        let mut values = Vec::with_capacity(r * r * r);
        for d in 0..r {
            for h in 0..r {
                for w in 0..r {
                    values.push(if occupied(d, h, w) { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(Self { resolution, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> f32 {
        let r = self.resolution;
        self.values[(d * r + h) * r + w]
    }

    /// True when every value is exactly `+0.0` or `1.0`.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|v| v.to_bits() == 0 || *v == 1.0)
    }

    pub fn occupied(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.5).count()
    }

    /// `(1, r, r, r)`: one channel, no batch axis.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let r = self.resolution;
        Tensor::new(&[1, r, r, r], self.values.iter().map(|&v| T::from_f64_lossy(v as f64)).collect())
            .expect("length checked at construction")
    }

    /// Clamps into `[0, 1]`; the tensor must hold `r^3` values.
    pub fn from_values<T: Scalar>(resolution: usize, values: &[T]) -> Result<Self> {
        Self::new(resolution, values.iter().map(|v| (v.as_f64() as f32).clamp(0.0, 1.0)).collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let binary = self.is_binary();
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * if binary { 1 } else { 4 });
        out.extend_from_slice(&VOXEL_MAGIC);
        out.push(VOXEL_VERSION);
        out.push(if binary { DTYPE_BINARY } else { DTYPE_F32 });
        out.extend_from_slice(&(self.resolution as u16).to_le_bytes());
        if binary {
            for chunk in self.values.chunks(8) {
                let byte = chunk.iter().enumerate().fold(0u8, |b, (i, &v)| b | (((v == 1.0) as u8) << i));
                out.push(byte);
            }
        } else {
            for v in &self.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        if bytes.len() < 4 || bytes[..4] != VOXEL_MAGIC {
            return Err(FormatError::BadMagic {
                expected: VOXEL_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        if bytes[4] != VOXEL_VERSION {
            return Err(FormatError::UnsupportedVersion(bytes[4]));
        }
        let dtype = bytes[5];
        let res = u16::from_le_bytes([bytes[6], bytes[7]]);
        if !RESOLUTIONS.contains(&(res as usize)) {
            return Err(FormatError::InvalidResolution(res));
        }
        let n = (res as usize).pow(3);
        let payload_len = match dtype {
            DTYPE_BINARY => n.div_ceil(8),
            DTYPE_F32 => n * 4,
            other => return Err(FormatError::UnknownDtype(other)),
        };
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < payload_len {
            return Err(FormatError::Truncated {
                needed: HEADER_LEN + payload_len,
                available: bytes.len(),
            });
        }
        if payload.len() > payload_len {
            return Err(FormatError::TrailingBytes(payload.len() - payload_len));
        }
        let values: Vec<f32> = if dtype == DTYPE_BINARY {
            (0..n).map(|i| ((payload[i / 8] >> (i % 8)) & 1) as f32).collect()
        } else {
            payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
        };
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FormatError::InvalidValue(bad));
        }
        Ok(Self {
            resolution: res as usize,
            values,
        })
    }
}

pub fn write_voxels(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, grid.encode())?;
    Ok(())
}

pub fn read_voxels(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    Ok(VoxelGrid::decode(&std::fs::read(path)?)?)
}

/// Stacks grids of one resolution into `(N, 1, r, r, r)`.
pub fn stack_grids<'a, T: Scalar>(grids: impl IntoIterator<Item = &'a VoxelGrid>) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut res = None;
    let mut n = 0;
    for g in grids {
        if *res.get_or_insert(g.resolution) != g.resolution {
            return Err(Error::InvalidArgument("grids of different resolutions".into()));
        }
        data.extend(g.values.iter().map(|&v| T::from_f64_lossy(v as f64)));
        n += 1;
    }
    let r = res.unwrap_or(0);
    Tensor::new(&[n, 1, r, r, r], data)
}
