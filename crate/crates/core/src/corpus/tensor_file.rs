//! Self-describing dense tensor files.
//!
//! Layout (little endian): magic `AWTF`, `u32` version, `u8` dtype
//! (1 = f32, 2 = f64), `u8` ndim, `u64` per dimension, row-major payload.

use std::fs;
use std::path::Path;

use crate::{Error, Matrix, Result};

const MAGIC: &[u8; 4] = b"AWTF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values widened to f64; f32 files round-trip exactly.
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if shape.len() > u8::MAX as usize {
            return Err(Error::Shape("too many dimensions".into()));
        }
        let data = match dtype {
            DType::F32 => data.into_iter().map(|v| v as f32 as f64).collect(),
            DType::F64 => data,
        };
        Ok(Self { dtype, shape, data })
    }

    pub fn from_matrix(m: &Matrix, dtype: DType) -> Self {
        Self::new(dtype, vec![m.rows(), m.cols()], m.as_slice().to_vec()).expect("matrix shape is consistent")
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!("expected a 2-D tensor, found shape {:?}", self.shape)));
        }
        Matrix::from_vec(self.shape[0], self.shape[1], self.data.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.shape.len() + self.data.len() * self.dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            match self.dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err("not a tensor file (bad magic)".into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported tensor file version {version}"));
        }
        let dtype = DType::from_code(bytes[8]).ok_or_else(|| format!("unknown dtype code {}", bytes[8]))?;
        let ndim = bytes[9] as usize;
        let dims_end = 10 + 8 * ndim;
        if bytes.len() < dims_end {
            return Err("truncated header".into());
        }
        let shape: Vec<usize> = bytes[10..dims_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("shape overflows")?;
        let payload = &bytes[dims_end..];
        if Some(payload.len()) != n.checked_mul(dtype.size()) {
            return Err(format!(
                "payload has {} bytes, shape {shape:?} needs {}",
                payload.len(),
                n.saturating_mul(dtype.size())
            ));
        }
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(Self { dtype, shape, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }
}
