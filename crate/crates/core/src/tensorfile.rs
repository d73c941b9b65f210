//! Binary tensor container.
//!
//! ```text
//! magic   "LUTT"
//! version u32 LE (1)
//! dtype   u8   fp16=1 fp8=2 int16=3 int8=4 int4=5 int3=6 int2=7 int1=8 fp32=9 int32=10
//! flags   u8   bit0: per-channel (scale, zero) sidecar follows the payload
//! ndim    u8
//! dims    u64 LE x ndim
//! payload dense formats: little-endian values, row-major
//!         int1..int4: W planes, each [N rows x ceil(K/8) bytes], LSB first
//! sidecar N x (scale f64 LE, zero f64 LE)
//! ```
//!
//! Weight planes hold the unsigned codes; the sidecar holds the matching
//! unreinterpreted parameters.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{fp16_bits, fp16_from_bits, fp8_e4m3_bits, fp8_e4m3_from_bits, Dtype};
use crate::quantizer::{BitPlanes, QuantParams, QuantizedWeights};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"LUTT";
pub const VERSION: u32 = 1;
const FLAG_SIDECAR: u8 = 1;

pub fn dtype_code(d: Dtype) -> u8 {
    match d {
        Dtype::Fp16 => 1,
        Dtype::Fp8E4m3 => 2,
        Dtype::Int16 => 3,
        Dtype::Int8 => 4,
        Dtype::Int4 => 5,
        Dtype::Int3 => 6,
        Dtype::Int2 => 7,
        Dtype::Int1 => 8,
        Dtype::Fp32 => 9,
        Dtype::Int32 => 10,
    }
}

pub fn dtype_from_code(c: u8) -> Result<Dtype> {
    Dtype::ALL
        .into_iter()
        .find(|&d| dtype_code(d) == c)
        .ok_or_else(|| bad(format!("unknown dtype code {c}")))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::TensorFile(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorFile {
    Dense {
        dtype: Dtype,
        dims: Vec<usize>,
        values: Vec<f64>,
    },
    Weights {
        planes: BitPlanes,
        params: Option<QuantParams>,
    },
}

impl TensorFile {
    pub fn from_matrix(m: &Matrix, dtype: Dtype) -> Result<Self> {
        if dtype.is_weight() {
            return Err(bad("weight formats are stored as bit planes"));
        }
        if let Some(v) = m.as_slice().iter().find(|&&v| !dtype.represents(v)) {
            return Err(bad(format!("{v} is not representable in {dtype}")));
        }
        Ok(TensorFile::Dense {
            dtype,
            dims: vec![m.rows(), m.cols()],
            values: m.as_slice().to_vec(),
        })
    }

    /// Store unreinterpreted weights with their parameters.
    pub fn from_weights(qw: &QuantizedWeights) -> Result<Self> {
        if qw.is_reinterpreted() {
            return Err(Error::AlreadyReinterpreted);
        }
        Ok(TensorFile::Weights {
            planes: qw.reinterpret_symmetric()?.pack_bitplanes()?,
            params: Some(qw.params().clone()),
        })
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            TensorFile::Dense { dtype, .. } => *dtype,
            TensorFile::Weights { planes, .. } => {
                Dtype::weight_for_bits(planes.w_bits()).expect("planes hold 1..=4 bits")
            }
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            TensorFile::Dense { dims, .. } => dims.clone(),
            TensorFile::Weights { planes, .. } => vec![planes.rows(), planes.cols()],
        }
    }

    /// Dense 2-D (or 1-D, as one row) contents.
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self {
            TensorFile::Dense { dims, values, .. } => match dims.as_slice() {
                [r, c] => Matrix::from_vec(*r, *c, values.clone()),
                [c] => Matrix::from_vec(1, *c, values.clone()),
                _ => Err(bad(format!("{}-d tensor is not a matrix", dims.len()))),
            },
            TensorFile::Weights { .. } => Err(bad("file holds weights, not a dense tensor")),
        }
    }

    pub fn to_weights(&self) -> Result<QuantizedWeights> {
        match self {
            TensorFile::Weights {
                planes,
                params: Some(p),
            } => QuantizedWeights::from_codes(
                planes.rows(),
                planes.cols(),
                planes.unsigned_codes(),
                p.clone(),
            ),
            TensorFile::Weights { params: None, .. } => {
                Err(bad("weight file has no scale/zero sidecar"))
            }
            TensorFile::Dense { .. } => Err(bad("file holds a dense tensor, not weights")),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let dims = self.dims();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype_code(self.dtype()));
        let sidecar = matches!(self, TensorFile::Weights { params: Some(_), .. });
        out.push(if sidecar { FLAG_SIDECAR } else { 0 });
        out.push(dims.len() as u8);
        for d in &dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        match self {
            TensorFile::Dense { dtype, values, .. } => {
                for &v in values {
                    encode_value(&mut out, *dtype, v);
                }
            }
            TensorFile::Weights { planes, params } => {
                for b in 0..planes.w_bits() as usize {
                    out.extend_from_slice(planes.plane(b));
                }
                if let Some(p) = params {
                    for (s, z) in p.scale.iter().zip(&p.zero) {
                        out.extend_from_slice(&s.to_le_bytes());
                        out.extend_from_slice(&z.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<TensorFile> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dtype = dtype_from_code(r.take(1)?[0])?;
        let flags = r.take(1)?[0];
        if flags & !FLAG_SIDECAR != 0 {
            return Err(bad(format!("unknown flags {flags:#x}")));
        }
        let ndim = r.take(1)?[0] as usize;
        let dims = (0..ndim)
            .map(|_| {
                let d = u64::from_le_bytes(r.array()?);
                usize::try_from(d).map_err(|_| bad("dimension overflows usize"))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("element count overflows"))?;
        let file = if dtype.is_weight() {
            let [n, k] = dims[..] else {
                return Err(bad("weight tensors must be 2-d"));
            };
            let rb = BitPlanes::row_bytes(k);
            let w_bits = dtype.bit_width();
            let mut planes = Vec::with_capacity(w_bits as usize);
            for _ in 0..w_bits {
                let p = r.take(n.checked_mul(rb).ok_or_else(|| bad("plane size overflows"))?)?;
                if k % 8 != 0 && p.chunks(rb).any(|row| row[rb - 1] >> (k % 8) != 0) {
                    return Err(bad("nonzero padding bits in weight plane"));
                }
                planes.push(p.to_vec());
            }
            let params = if flags & FLAG_SIDECAR != 0 {
                let mut scale = Vec::with_capacity(n);
                let mut zero = Vec::with_capacity(n);
                for _ in 0..n {
                    scale.push(f64::from_le_bytes(r.array()?));
                    zero.push(f64::from_le_bytes(r.array()?));
                }
                Some(QuantParams {
                    w_bits,
                    scale,
                    zero,
                })
            } else {
                None
            };
            TensorFile::Weights {
                planes: BitPlanes::from_raw(w_bits, n, k, planes)?,
                params,
            }
        } else {
            if flags & FLAG_SIDECAR != 0 {
                return Err(bad("sidecar flag on a dense tensor"));
            }
            let width = (dtype.bit_width() / 8) as usize;
            let payload = r.take(count.checked_mul(width).ok_or_else(|| bad("payload overflows"))?)?;
            let values = payload
                .chunks_exact(width)
                .map(|c| decode_value(dtype, c))
                .collect();
            TensorFile::Dense {
                dtype,
                dims,
                values,
            }
        };
        if r.pos != bytes.len() {
            return Err(bad(format!(
                "{} trailing bytes after payload",
                bytes.len() - r.pos
            )));
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<TensorFile> {
        TensorFile::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

fn encode_value(out: &mut Vec<u8>, dtype: Dtype, v: f64) {
    match dtype {
        Dtype::Fp16 => out.extend_from_slice(&fp16_bits(v).to_le_bytes()),
        Dtype::Fp8E4m3 => out.push(fp8_e4m3_bits(v)),
        Dtype::Fp32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        Dtype::Int16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
        Dtype::Int8 => out.push(v as i8 as u8),
        Dtype::Int32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
        w => unreachable!("{w} is stored as bit planes"),
    }
}

fn decode_value(dtype: Dtype, c: &[u8]) -> f64 {
    match dtype {
        Dtype::Fp16 => fp16_from_bits(u16::from_le_bytes([c[0], c[1]])),
        Dtype::Fp8E4m3 => fp8_e4m3_from_bits(c[0]),
        Dtype::Fp32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
        Dtype::Int16 => i16::from_le_bytes([c[0], c[1]]) as f64,
        Dtype::Int8 => c[0] as i8 as f64,
        Dtype::Int32 => i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
        w => unreachable!("{w} is stored as bit planes"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{quantize_weights, QuantMode};

    #[test]
    fn dense_roundtrip_all_formats() {
        for dtype in [
            Dtype::Fp16,
            Dtype::Fp8E4m3,
            Dtype::Int16,
            Dtype::Int8,
            Dtype::Fp32,
            Dtype::Int32,
        ] {
            let m = Matrix::from_fn(3, 5, |r, c| dtype.cast((r as f64 - 1.3) * (c as f64 + 0.7) * 3.1));
            let f = TensorFile::from_matrix(&m, dtype).unwrap();
            let bytes = f.encode();
            assert_eq!(bytes.len(), 4 + 4 + 3 + 16 + 15 * (dtype.bit_width() / 8) as usize);
            let back = TensorFile::decode(&bytes).unwrap();
            assert_eq!(back.to_matrix().unwrap(), m, "{dtype}");
        }
    }

    #[test]
    fn weight_roundtrip_with_sidecar() {
        let w = Matrix::from_fn(4, 11, |r, c| ((r * 11 + c) as f64 * 0.37).sin());
        for bits in 1..=4 {
            let qw = quantize_weights(&w, bits, QuantMode::Asymmetric).unwrap();
            let f = TensorFile::from_weights(&qw).unwrap();
            let bytes = f.encode();
            assert_eq!(bytes.len(), 27 + bits as usize * 4 * 2 + 4 * 16);
            let back = TensorFile::decode(&bytes).unwrap().to_weights().unwrap();
            assert_eq!(back, qw);
        }
    }

    #[test]
    fn rejects_malformed() {
        let m = Matrix::from_fn(2, 2, |r, c| (r + c) as f64);
        let good = TensorFile::from_matrix(&m, Dtype::Int8).unwrap().encode();
        assert!(TensorFile::decode(&good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(TensorFile::decode(&long).is_err());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(TensorFile::decode(&magic).is_err());
        let mut code = good.clone();
        code[8] = 99;
        assert!(TensorFile::decode(&code).is_err());
        assert!(TensorFile::from_matrix(&Matrix::from_fn(1, 1, |_, _| 0.5), Dtype::Int8).is_err());
    }
}
