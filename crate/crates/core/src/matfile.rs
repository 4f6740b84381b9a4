//! `OSAE-MAT v1` dense tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "OSAE"
//! version u32      1
//! dtype   u32      1 = float32, 2 = float64
//! rank    u32
//! dims    rank x u64
//! payload row-major elements
//! ```
//!
//! Matrices are `rows x cols`, so a `d x N` data matrix stores sample
//! coordinates interleaved by row. Float32 payloads are widened to f64 on read.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{format_err, invalid, Result};

pub const MAGIC: &[u8; 4] = b"OSAE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u32 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A row-major tensor of any rank, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &DMatrix<f64>, dtype: DType) -> Self {
        // nalgebra is column-major; the transpose's storage is our row-major order.
        let data = m.transpose().as_slice().to_vec();
        Self {
            dtype,
            dims: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn from_vector(v: &[f64], dtype: DType) -> Self {
        Self {
            dtype,
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }

    /// Interpret as a matrix. Rank-1 tensors become a single column.
    pub fn into_matrix(self) -> Result<DMatrix<f64>> {
        match self.dims.as_slice() {
            [n] => Ok(DMatrix::from_vec(*n, 1, self.data)),
            [r, c] => Ok(DMatrix::from_row_slice(*r, *c, &self.data)),
            _ => Err(format_err(
                "rank",
                format!("expected rank 1 or 2, found {}", self.dims.len()),
            )),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + self.dtype.width() * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.dtype.code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self.dtype {
            DType::F32 => {
                for &x in &self.data {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            DType::F64 => {
                for &x in &self.data {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    /// Decode one tensor that occupies the whole of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(format_err(
                "payload",
                format!("{} trailing bytes after tensor", bytes.len() - used),
            ));
        }
        Ok(t)
    }

    /// Decode one tensor from the front of `bytes`, returning bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(format_err("magic", format!("expected \"OSAE\", found {magic:?}")));
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(format_err("version", format!("unsupported version {version}")));
        }
        let code = cur.u32("dtype")?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| format_err("dtype", format!("unknown dtype code {code}")))?;
        let rank = cur.u32("rank")? as usize;
        if rank > 8 {
            return Err(format_err("rank", format!("implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            let d = cur.u64(&format!("dims[{i}]"))?;
            dims.push(usize::try_from(d).map_err(|_| format_err(format!("dims[{i}]"), "too large"))?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format_err("dims", "element count overflows"))?;
        let nbytes = count
            .checked_mul(dtype.width())
            .ok_or_else(|| format_err("dims", "payload size overflows"))?;
        let payload = cur.take(nbytes, "payload")?;
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
        Ok((Self { dtype, dims, data }, cur.pos))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err(
                field,
                format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len().saturating_sub(self.pos)
                ),
            )),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>, dtype: DType) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&Tensor::from_matrix(m, dtype).encode())?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    Tensor::decode(&bytes)?.into_matrix()
}

/// Load a matrix and check its shape, naming the file in the error.
pub fn load_matrix_checked(
    path: impl AsRef<Path>,
    rows: Option<usize>,
    cols: Option<usize>,
) -> Result<DMatrix<f64>> {
    let p = path.as_ref();
    let m = load_matrix(p)?;
    if rows.is_some_and(|r| r != m.nrows()) || cols.is_some_and(|c| c != m.ncols()) {
        return Err(invalid(format!(
            "{} has shape {}x{}, expected {}x{}",
            p.display(),
            m.nrows(),
            m.ncols(),
            rows.map_or("*".into(), |r| r.to_string()),
            cols.map_or("*".into(), |c| c.to_string()),
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::OsaeError;

    #[test]
    fn header_layout_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bytes = Tensor::from_matrix(&m, DType::F64).encode();
        assert_eq!(&bytes[0..4], b"OSAE");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &3u64.to_le_bytes());
        // row-major: second element is m[(0, 1)]
        assert_eq!(&bytes[40..48], &2.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 32 + 6 * 8);
    }

    #[test]
    fn f32_payload_widens() {
        let m = DMatrix::from_row_slice(1, 2, &[0.5, -1.25]);
        let bytes = Tensor::from_matrix(&m, DType::F32).encode();
        assert_eq!(bytes.len(), 32 + 8);
        let back = Tensor::decode(&bytes).unwrap().into_matrix().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncation_and_bad_headers_are_reported() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let bytes = Tensor::from_matrix(&m, DType::F64).encode();
        let field = |b: &[u8]| match Tensor::decode(b) {
            Err(OsaeError::Format { field, .. }) => field,
            other => panic!("expected format error, got {other:?}"),
        };
        assert_eq!(field(&bytes[..bytes.len() - 1]), "payload");
        assert_eq!(field(&bytes[..2]), "magic");
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(field(&bad), "version");
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert_eq!(field(&bad), "dtype");
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(field(&long), "payload");
    }
}
