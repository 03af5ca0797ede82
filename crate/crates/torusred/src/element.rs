//! Scalar element types carried through the collectives.
//!
//! All numeric kernels are generic over [`Element`], which is implemented for
//! `half::f16`, `f32`, and `f64`. Conversions between element types route
//! through `f64` (exact for every supported type) so that narrowing is a
//! single round-to-nearest-even step.

use std::fmt;
use std::str::FromStr;

use half::f16;
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element type tag used on the wire and in [`TensorBuffer`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F16,
    F64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DtypeError {
    #[error("unknown dtype code {0}")]
    UnknownCode(u8),
    #[error("unknown dtype name {0:?} (expected f16, f32, or f64)")]
    UnknownName(String),
    #[error("payload of {len} bytes is not a multiple of {dtype} element size {size}")]
    Misaligned {
        len: usize,
        dtype: Dtype,
        size: usize,
    },
}

impl Dtype {
    /// Wire code: 0 = f32, 1 = f16, 2 = f64.
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F16 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, DtypeError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F16),
            2 => Ok(Dtype::F64),
            other => Err(DtypeError::UnknownCode(other)),
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    /// Total order by precision, used to validate reduction policies.
    pub fn precision_rank(self) -> u8 {
        match self {
            Dtype::F16 => 0,
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    /// Encode a slice of elements as little-endian bytes of this dtype.
    /// Narrowing conversions round to nearest even.
    pub fn encode_slice<E: Element>(self, src: &[E]) -> Vec<u8> {
        let mut out = Vec::with_capacity(src.len() * self.size_bytes());
        match self {
            Dtype::F16 => {
                for v in src {
                    out.extend_from_slice(&f16::from_f64(v.into_f64()).to_le_bytes());
                }
            }
            Dtype::F32 => {
                for v in src {
                    out.extend_from_slice(&(v.into_f64() as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for v in src {
                    out.extend_from_slice(&v.into_f64().to_le_bytes());
                }
            }
        }
        out
    }

    /// Decode little-endian bytes of this dtype into elements of type `E`.
    pub fn decode_slice<E: Element>(self, bytes: &[u8]) -> Result<Vec<E>, DtypeError> {
        let size = self.size_bytes();
        if !bytes.len().is_multiple_of(size) {
            return Err(DtypeError::Misaligned {
                len: bytes.len(),
                dtype: self,
                size,
            });
        }
        let mut out = Vec::with_capacity(bytes.len() / size);
        match self {
            Dtype::F16 => {
                for c in bytes.chunks_exact(2) {
                    let v = f16::from_le_bytes([c[0], c[1]]);
                    out.push(E::from_f64_lossy(f64::from(v)));
                }
            }
            Dtype::F32 => {
                for c in bytes.chunks_exact(4) {
                    let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                    out.push(E::from_f64_lossy(v as f64));
                }
            }
            Dtype::F64 => {
                for c in bytes.chunks_exact(8) {
                    let v = f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]);
                    out.push(E::from_f64_lossy(v));
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::F16 => write!(f, "f16"),
            Dtype::F32 => write!(f, "f32"),
            Dtype::F64 => write!(f, "f64"),
        }
    }
}

impl FromStr for Dtype {
    type Err = DtypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f16" => Ok(Dtype::F16),
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(DtypeError::UnknownName(other.to_string())),
        }
    }
}

/// Floating-point scalar usable as a collective element or accumulator.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + Default + Send + Sync + 'static
{
    const DTYPE: Dtype;

    /// Exact widening to f64 (every supported element is a subset of f64).
    fn into_f64(self) -> f64;

    /// Round-to-nearest-even narrowing from f64.
    fn from_f64_lossy(v: f64) -> Self;
}

impl Element for f16 {
    const DTYPE: Dtype = Dtype::F16;

    fn into_f64(self) -> f64 {
        f64::from(self)
    }

    fn from_f64_lossy(v: f64) -> Self {
        f16::from_f64(v)
    }
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn into_f64(self) -> f64 {
        self as f64
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn into_f64(self) -> f64 {
        self
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// A flat numeric vector tagged with its element type.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorBuffer {
    F16(Vec<f16>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorBuffer {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorBuffer::F16(_) => Dtype::F16,
            TensorBuffer::F32(_) => Dtype::F32,
            TensorBuffer::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorBuffer::F16(v) => v.len(),
            TensorBuffer::F32(v) => v.len(),
            TensorBuffer::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(dtype: Dtype, len: usize) -> Self {
        match dtype {
            Dtype::F16 => TensorBuffer::F16(vec![f16::ZERO; len]),
            Dtype::F32 => TensorBuffer::F32(vec![0.0; len]),
            Dtype::F64 => TensorBuffer::F64(vec![0.0; len]),
        }
    }

    /// Build a buffer of the given dtype from f64 values (rounding as needed).
    pub fn from_f64_slice(dtype: Dtype, values: &[f64]) -> Self {
        match dtype {
            Dtype::F16 => TensorBuffer::F16(values.iter().map(|&v| f16::from_f64(v)).collect()),
            Dtype::F32 => TensorBuffer::F32(values.iter().map(|&v| v as f32).collect()),
            Dtype::F64 => TensorBuffer::F64(values.to_vec()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            TensorBuffer::F16(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorBuffer::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorBuffer::F64(v) => v.clone(),
        }
    }

    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            TensorBuffer::F16(v) => f64::from(v[i]),
            TensorBuffer::F32(v) => v[i] as f64,
            TensorBuffer::F64(v) => v[i],
        }
    }

    pub fn set_from_f64(&mut self, i: usize, value: f64) {
        match self {
            TensorBuffer::F16(v) => v[i] = f16::from_f64(value),
            TensorBuffer::F32(v) => v[i] = value as f32,
            TensorBuffer::F64(v) => v[i] = value,
        }
    }
}
