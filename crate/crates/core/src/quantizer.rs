//! Low-bit weight quantization, symmetric reinterpretation and bit-plane
//! packing.
//!
//! Weights are laid out `[n_out, k_dim]`, one quantization channel per row.
//! A row is dequantized as `scale * (code - zero)`. Reinterpretation maps the
//! unsigned code set `{0, .., 2^W - 1}` onto the odd, zero-symmetric set
//! `{-(2^W - 1), .., -1, 1, .., 2^W - 1}` while adjusting `scale`/`zero` so the
//! dequantized values are unchanged.

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::clamp_round_int;
use crate::tensor::Matrix;

pub const MAX_WEIGHT_BITS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    /// `zero = (2^W - 1) / 2`, scale from the largest magnitude.
    Symmetric,
    /// Min-max range with an integer zero-point.
    Asymmetric,
}

/// Per-channel affine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub w_bits: u32,
    pub scale: Vec<f64>,
    pub zero: Vec<f64>,
}

impl QuantParams {
    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// `2 * zero[ch]` as an integer, when it is one.
    ///
    /// Both quantization modes produce half-integer zero-points, which lets
    /// the engine apply the zero-point correction in exact integer
    /// arithmetic.
    pub fn twice_zero(&self, ch: usize) -> Option<i64> {
        let t = 2.0 * self.zero[ch];
        (t.fract() == 0.0 && t.abs() < 2f64.powi(52)).then_some(t as i64)
    }

    fn validate(&self, channels: usize) -> Result<()> {
        check_bits(self.w_bits)?;
        if self.scale.len() != channels || self.zero.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "{} scales / {} zeros for {channels} channels",
                self.scale.len(),
                self.zero.len()
            )));
        }
        if let Some(s) = self.scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidArgument(format!("scale {s} must be positive")));
        }
        if self.zero.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("non-finite zero-point".into()));
        }
        Ok(())
    }
}

fn check_bits(w_bits: u32) -> Result<()> {
    if (1..=MAX_WEIGHT_BITS).contains(&w_bits) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "weight bit width {w_bits} outside 1..={MAX_WEIGHT_BITS}"
        )))
    }
}

/// Largest unsigned code, `2^W - 1`.
pub fn max_code(w_bits: u32) -> i32 {
    (1 << w_bits) - 1
}

/// `q' = 2q - (2^W - 1)`.
pub fn reinterpret_code(code: i32, w_bits: u32) -> i32 {
    2 * code - max_code(w_bits)
}

/// Inverse of [`reinterpret_code`].
pub fn original_code(code: i32, w_bits: u32) -> i32 {
    (code + max_code(w_bits)) / 2
}

/// `(s', z') = (s / 2, 2z + 1 - 2^W)`, generic so it can be evaluated in
/// exact rational arithmetic as well as in `f64`.
pub fn reinterpret_affine<T>(scale: T, zero: T, w_bits: u32) -> (T, T)
where
    T: Num + FromPrimitive + Clone,
{
    let two = T::from_i64(2).expect("2 is representable");
    let levels = T::from_i64(max_code(w_bits) as i64).expect("small integer");
    (scale / two.clone(), two * zero - levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedWeights {
    rows: usize,
    cols: usize,
    codes: Vec<i32>,
    params: QuantParams,
    reinterpreted: bool,
}

impl QuantizedWeights {
    /// Build from unsigned codes and their parameters.
    pub fn from_codes(
        rows: usize,
        cols: usize,
        codes: Vec<i32>,
        params: QuantParams,
    ) -> Result<Self> {
        params.validate(rows)?;
        if codes.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} codes for a {rows}x{cols} weight matrix",
                codes.len()
            )));
        }
        let hi = max_code(params.w_bits);
        if let Some(c) = codes.iter().find(|&&c| !(0..=hi).contains(&c)) {
            return Err(Error::InvalidArgument(format!(
                "code {c} outside 0..={hi} for {}-bit weights",
                params.w_bits
            )));
        }
        Ok(QuantizedWeights {
            rows,
            cols,
            codes,
            params,
            reinterpreted: false,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn w_bits(&self) -> u32 {
        self.params.w_bits
    }

    pub fn codes(&self) -> &[i32] {
        &self.codes
    }

    pub fn row_codes(&self, n: usize) -> &[i32] {
        &self.codes[n * self.cols..(n + 1) * self.cols]
    }

    pub fn params(&self) -> &QuantParams {
        &self.params
    }

    pub fn is_reinterpreted(&self) -> bool {
        self.reinterpreted
    }

    /// Map codes onto the odd symmetric set and adjust the parameters.
    pub fn reinterpret_symmetric(&self) -> Result<QuantizedWeights> {
        if self.reinterpreted {
            return Err(Error::AlreadyReinterpreted);
        }
        let w_bits = self.params.w_bits;
        let (scale, zero) = self
            .params
            .scale
            .iter()
            .zip(&self.params.zero)
            .map(|(&s, &z)| reinterpret_affine(s, z, w_bits))
            .unzip();
        Ok(QuantizedWeights {
            rows: self.rows,
            cols: self.cols,
            codes: self.codes.iter().map(|&q| reinterpret_code(q, w_bits)).collect(),
            params: QuantParams {
                w_bits,
                scale,
                zero,
            },
            reinterpreted: true,
        })
    }

    /// Unsigned codes regardless of representation.
    pub fn unsigned_codes(&self) -> Vec<i32> {
        if self.reinterpreted {
            let w = self.params.w_bits;
            self.codes.iter().map(|&c| original_code(c, w)).collect()
        } else {
            self.codes.clone()
        }
    }

    /// `scale * (code - zero)` with whichever parameter set the value carries.
    pub fn dequantize(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |n, k| {
            let code = self.codes[n * self.cols + k] as f64;
            self.params.scale[n] * (code - self.params.zero[n])
        })
    }

    /// Split reinterpreted weights into `W` bit planes of the unsigned code.
    pub fn pack_bitplanes(&self) -> Result<BitPlanes> {
        if !self.reinterpreted {
            return Err(Error::NotReinterpreted);
        }
        Ok(BitPlanes::from_unsigned(
            self.params.w_bits,
            self.rows,
            self.cols,
            &self.unsigned_codes(),
        ))
    }
}

/// Quantize a real `[n_out, k_dim]` matrix channel-wise.
pub fn quantize_weights(w: &Matrix, w_bits: u32, mode: QuantMode) -> Result<QuantizedWeights> {
    check_bits(w_bits)?;
    if w.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite".into()));
    }
    let levels = max_code(w_bits) as f64;
    let mut scale = Vec::with_capacity(w.rows());
    let mut zero = Vec::with_capacity(w.rows());
    let mut codes = Vec::with_capacity(w.rows() * w.cols());
    for n in 0..w.rows() {
        let row = w.row(n);
        let (s, z) = match mode {
            QuantMode::Symmetric => {
                let amax = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let s = if amax > 0.0 { 2.0 * amax / levels } else { 1.0 };
                (s, levels / 2.0)
            }
            QuantMode::Asymmetric => {
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s = if hi > lo { (hi - lo) / levels } else { 1.0 };
                let z = if row.is_empty() { 0.0 } else { (-lo / s).round_ties_even() };
                // -0.0 would otherwise leak into serialized sidecars
                (s, z + 0.0)
            }
        };
        codes.extend(
            row.iter()
                .map(|&v| clamp_round_int(v / s + z, w_bits, false) as i32),
        );
        scale.push(s);
        zero.push(z);
    }
    QuantizedWeights::from_codes(
        w.rows(),
        w.cols(),
        codes,
        QuantParams {
            w_bits,
            scale,
            zero,
        },
    )
}

/// `W` bit-matrices of shape `[rows, cols]`. Plane `b` holds bit `b` of the
/// unsigned code. Rows are packed 8 bits per byte, least significant bit
/// first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlanes {
    w_bits: u32,
    rows: usize,
    cols: usize,
    planes: Vec<Vec<u8>>,
}

impl BitPlanes {
    pub fn row_bytes(cols: usize) -> usize {
        cols.div_ceil(8)
    }

    fn from_unsigned(w_bits: u32, rows: usize, cols: usize, codes: &[i32]) -> BitPlanes {
        let rb = Self::row_bytes(cols);
        let mut planes = vec![vec![0u8; rows * rb]; w_bits as usize];
        for n in 0..rows {
            for k in 0..cols {
                let q = codes[n * cols + k];
                for (b, plane) in planes.iter_mut().enumerate() {
                    if (q >> b) & 1 == 1 {
                        plane[n * rb + k / 8] |= 1 << (k % 8);
                    }
                }
            }
        }
        BitPlanes {
            w_bits,
            rows,
            cols,
            planes,
        }
    }

    /// Wrap raw plane bytes, e.g. read back from a tensor file.
    pub fn from_raw(w_bits: u32, rows: usize, cols: usize, planes: Vec<Vec<u8>>) -> Result<Self> {
        check_bits(w_bits)?;
        let rb = Self::row_bytes(cols);
        if planes.len() != w_bits as usize || planes.iter().any(|p| p.len() != rows * rb) {
            return Err(Error::ShapeMismatch(format!(
                "bit planes do not match {w_bits} x [{rows}, {cols}]"
            )));
        }
        Ok(BitPlanes {
            w_bits,
            rows,
            cols,
            planes,
        })
    }

    pub fn w_bits(&self) -> u32 {
        self.w_bits
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn plane(&self, b: usize) -> &[u8] {
        &self.planes[b]
    }

    pub fn bit(&self, b: usize, n: usize, k: usize) -> bool {
        let rb = Self::row_bytes(self.cols);
        (self.planes[b][n * rb + k / 8] >> (k % 8)) & 1 == 1
    }

    pub fn unsigned_codes(&self) -> Vec<i32> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for n in 0..self.rows {
            for k in 0..self.cols {
                out.push(
                    (0..self.w_bits as usize)
                        .map(|b| (self.bit(b, n, k) as i32) << b)
                        .sum(),
                );
            }
        }
        out
    }

    /// `q' = sum_b 2^b (2 bit_b - 1)`.
    pub fn reinterpreted_codes(&self) -> Vec<i32> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for n in 0..self.rows {
            for k in 0..self.cols {
                out.push(
                    (0..self.w_bits as usize)
                        .map(|b| (2 * self.bit(b, n, k) as i32 - 1) << b)
                        .sum(),
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> Matrix {
        Matrix::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_example() {
        let qw = quantize_weights(&row(&[-1.5, -0.5, 0.5, 1.5]), 2, QuantMode::Symmetric).unwrap();
        assert_eq!(qw.codes(), &[0, 1, 2, 3]);
        assert_eq!(qw.params().scale, vec![1.0]);
        assert_eq!(qw.params().zero, vec![1.5]);
        assert_eq!(qw.dequantize().as_slice(), &[-1.5, -0.5, 0.5, 1.5]);
    }

    #[test]
    fn degenerate_rows_get_unit_scale() {
        for bits in 1..=4 {
            for mode in [QuantMode::Symmetric, QuantMode::Asymmetric] {
                let qw = quantize_weights(&row(&[0.0; 4]), bits, mode).unwrap();
                assert_eq!(qw.params().scale, vec![1.0]);
                assert!(qw.codes().windows(2).all(|w| w[0] == w[1]));
            }
        }
        let qw = quantize_weights(&row(&[2.25, 2.25]), 3, QuantMode::Asymmetric).unwrap();
        assert_eq!(qw.params().scale, vec![1.0]);
        assert!(qw.dequantize().max_abs_diff(&row(&[2.25, 2.25])) <= 0.5);
    }

    #[test]
    fn single_element_one_bit() {
        let qw = quantize_weights(&row(&[0.5]), 1, QuantMode::Symmetric).unwrap();
        assert_eq!(qw.codes(), &[1]);
        let s = qw.params().scale[0];
        assert!((qw.dequantize().get(0, 0) - 0.5).abs() <= s / 2.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(quantize_weights(&row(&[1.0]), 0, QuantMode::Symmetric).is_err());
        assert!(quantize_weights(&row(&[1.0]), 5, QuantMode::Symmetric).is_err());
        assert!(quantize_weights(&row(&[f64::NAN]), 2, QuantMode::Symmetric).is_err());
    }

    #[test]
    fn reinterpret_four_bit_mapping() {
        let codes: Vec<i32> = (0..16).collect();
        let params = QuantParams {
            w_bits: 4,
            scale: vec![1.0],
            zero: vec![7.5],
        };
        let qw = QuantizedWeights::from_codes(1, 16, codes, params).unwrap();
        let r = qw.reinterpret_symmetric().unwrap();
        let expect: Vec<i32> = (0..16).map(|i| -15 + 2 * i).collect();
        assert_eq!(r.codes(), expect.as_slice());
        assert_eq!(r.params().zero, vec![0.0]);
        assert_eq!(r.dequantize(), qw.dequantize());
    }

    #[test]
    fn reinterpret_examples() {
        let two = QuantizedWeights::from_codes(
            1,
            4,
            vec![0, 1, 2, 3],
            QuantParams {
                w_bits: 2,
                scale: vec![1.0],
                zero: vec![1.5],
            },
        )
        .unwrap()
        .reinterpret_symmetric()
        .unwrap();
        assert_eq!(two.codes(), &[-3, -1, 1, 3]);
        assert_eq!(two.params().scale, vec![0.5]);
        assert_eq!(two.params().zero, vec![0.0]);

        let one = QuantizedWeights::from_codes(
            1,
            2,
            vec![0, 1],
            QuantParams {
                w_bits: 1,
                scale: vec![2.0],
                zero: vec![0.5],
            },
        )
        .unwrap();
        assert_eq!(one.dequantize().as_slice(), &[-1.0, 1.0]);
        let r = one.reinterpret_symmetric().unwrap();
        assert_eq!(r.codes(), &[-1, 1]);
        assert_eq!(r.params().scale, vec![1.0]);
        assert_eq!(r.params().zero, vec![0.0]);
        assert_eq!(r.dequantize().as_slice(), &[-1.0, 1.0]);
        assert!(matches!(
            r.reinterpret_symmetric(),
            Err(Error::AlreadyReinterpreted)
        ));
    }

    #[test]
    fn dequantize_at_zero_point() {
        let qw = QuantizedWeights::from_codes(
            1,
            1,
            vec![2],
            QuantParams {
                w_bits: 2,
                scale: vec![0.25],
                zero: vec![2.0],
            },
        )
        .unwrap();
        assert_eq!(qw.dequantize().as_slice(), &[0.0]);
    }

    #[test]
    fn pack_two_bit_column() {
        let qw = QuantizedWeights::from_codes(
            4,
            1,
            vec![2, 1, 3, 0],
            QuantParams {
                w_bits: 2,
                scale: vec![1.0; 4],
                zero: vec![1.5; 4],
            },
        )
        .unwrap()
        .reinterpret_symmetric()
        .unwrap();
        assert_eq!(qw.codes(), &[1, -1, 3, -3]);
        let bp = qw.pack_bitplanes().unwrap();
        let plane = |b| (0..4).map(|n| bp.bit(b, n, 0) as u8).collect::<Vec<_>>();
        assert_eq!(plane(0), vec![0, 1, 1, 0]);
        assert_eq!(plane(1), vec![1, 0, 1, 0]);
        assert_eq!(bp.reinterpreted_codes(), qw.codes());
    }

    #[test]
    fn pack_requires_reinterpretation() {
        let qw = quantize_weights(&row(&[1.0, -1.0]), 1, QuantMode::Symmetric).unwrap();
        assert!(matches!(qw.pack_bitplanes(), Err(Error::NotReinterpreted)));
        let bp = qw.reinterpret_symmetric().unwrap().pack_bitplanes().unwrap();
        assert_eq!(bp.unsigned_codes(), vec![1, 0]);
    }

    #[test]
    fn pack_roundtrip_exhaustive_small() {
        for w_bits in 1..=2u32 {
            for k_dim in 1..=4usize {
                let levels = 1usize << w_bits;
                let total = levels.pow(k_dim as u32);
                for mut idx in 0..total {
                    let mut codes = Vec::with_capacity(k_dim);
                    for _ in 0..k_dim {
                        codes.push((idx % levels) as i32);
                        idx /= levels;
                    }
                    let qw = QuantizedWeights::from_codes(
                        1,
                        k_dim,
                        codes.clone(),
                        QuantParams {
                            w_bits,
                            scale: vec![1.0],
                            zero: vec![0.0],
                        },
                    )
                    .unwrap()
                    .reinterpret_symmetric()
                    .unwrap();
                    let bp = qw.pack_bitplanes().unwrap();
                    assert_eq!(bp.unsigned_codes(), codes);
                    assert_eq!(bp.reinterpreted_codes(), qw.codes());
                }
            }
        }
    }

    #[test]
    fn twice_zero_detects_half_integers() {
        let p = QuantParams {
            w_bits: 2,
            scale: vec![1.0; 3],
            zero: vec![1.5, -3.0, 0.3],
        };
        assert_eq!(p.twice_zero(0), Some(3));
        assert_eq!(p.twice_zero(1), Some(-6));
        assert_eq!(p.twice_zero(2), None);
    }
}
