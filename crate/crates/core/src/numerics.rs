//! Deterministic emulation of the narrow numeric formats used by the engine.
//!
//! Every rounding here is round-to-nearest, ties-to-even. The float formats
//! saturate at their largest finite value instead of producing infinities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Largest finite binary16 value.
pub const FP16_MAX: f64 = 65504.0;
/// Largest finite E4M3 value.
pub const FP8_E4M3_MAX: f64 = 448.0;

/// Element formats understood by the engine.
///
/// `Int1`..`Int4` are weight-only formats. `Fp32` and `Int32` only appear as
/// accumulator or output formats of an LMMA instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Dtype {
    Fp16,
    Fp8E4m3,
    Int16,
    Int8,
    Int4,
    Int3,
    Int2,
    Int1,
    Fp32,
    Int32,
}

impl Dtype {
    pub const ALL: [Dtype; 10] = [
        Dtype::Fp16,
        Dtype::Fp8E4m3,
        Dtype::Int16,
        Dtype::Int8,
        Dtype::Int4,
        Dtype::Int3,
        Dtype::Int2,
        Dtype::Int1,
        Dtype::Fp32,
        Dtype::Int32,
    ];

    pub fn bit_width(self) -> u32 {
        match self {
            Dtype::Fp16 | Dtype::Int16 => 16,
            Dtype::Fp8E4m3 | Dtype::Int8 => 8,
            Dtype::Int4 => 4,
            Dtype::Int3 => 3,
            Dtype::Int2 => 2,
            Dtype::Int1 => 1,
            Dtype::Fp32 | Dtype::Int32 => 32,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::Fp16 | Dtype::Fp8E4m3 | Dtype::Fp32)
    }

    /// Low-bit integer formats a weight matrix may be stored in.
    pub fn is_weight(self) -> bool {
        matches!(self, Dtype::Int1 | Dtype::Int2 | Dtype::Int3 | Dtype::Int4)
    }

    /// Formats an activation tile may be declared in.
    pub fn is_activation(self) -> bool {
        matches!(self, Dtype::Fp16 | Dtype::Fp8E4m3 | Dtype::Int8 | Dtype::Int16)
    }

    /// Weight format for a bit width in `1..=4`.
    pub fn weight_for_bits(bits: u32) -> Option<Dtype> {
        match bits {
            1 => Some(Dtype::Int1),
            2 => Some(Dtype::Int2),
            3 => Some(Dtype::Int3),
            4 => Some(Dtype::Int4),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Dtype::Fp16 => "fp16",
            Dtype::Fp8E4m3 => "fp8",
            Dtype::Int16 => "int16",
            Dtype::Int8 => "int8",
            Dtype::Int4 => "int4",
            Dtype::Int3 => "int3",
            Dtype::Int2 => "int2",
            Dtype::Int1 => "int1",
            Dtype::Fp32 => "fp32",
            Dtype::Int32 => "int32",
        }
    }

    /// Grid spacing of the fixed-point representation used for exact
    /// accumulation. Every finite value of the format is an integer multiple
    /// of this power of two.
    pub fn fixed_point_unit(self) -> Option<f64> {
        match self {
            // smallest binary16 subnormal
            Dtype::Fp16 => Some(2f64.powi(-24)),
            // smallest E4M3 subnormal
            Dtype::Fp8E4m3 => Some(2f64.powi(-9)),
            Dtype::Fp32 => None,
            _ => Some(1.0),
        }
    }

    /// Round `x` into this format (saturating).
    pub fn cast(self, x: f64) -> f64 {
        match self {
            Dtype::Fp16 => round_to_fp16(x),
            Dtype::Fp8E4m3 => round_to_fp8_e4m3(x),
            Dtype::Fp32 => round_to_fp32(x),
            int => clamp_round_int(x, int.bit_width(), true) as f64,
        }
    }

    /// True when `x` is exactly a value of this format.
    pub fn represents(self, x: f64) -> bool {
        x.is_finite() && self.cast(x) == x
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dtype::ALL
            .iter()
            .copied()
            .find(|d| d.token() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dtype `{s}`")))
    }
}

impl From<Dtype> for String {
    fn from(d: Dtype) -> String {
        d.token().to_string()
    }
}

impl TryFrom<String> for Dtype {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Round to a binary float grid with `mantissa_bits` stored fraction bits,
/// minimum normal exponent `min_exp`, saturating at `max_finite`.
fn round_to_binary_format(x: f64, mantissa_bits: i32, min_exp: i32, max_finite: f64) -> f64 {
    debug_assert!(x.is_finite());
    if x == 0.0 {
        return x;
    }
    let biased = ((x.to_bits() >> 52) & 0x7ff) as i32;
    let exp = (biased - 1023).max(min_exp);
    // power-of-two quantum, so the division and multiplication are exact
    let quantum = 2f64.powi(exp - mantissa_bits);
    let r = (x / quantum).round_ties_even() * quantum;
    if r.abs() > max_finite {
        max_finite.copysign(x)
    } else {
        r
    }
}

/// Nearest IEEE-754 binary16 value, saturating at ±65504.
pub fn round_to_fp16(x: f64) -> f64 {
    round_to_binary_format(x, 10, -14, FP16_MAX)
}

/// Nearest E4M3 value, saturating at ±448.
pub fn round_to_fp8_e4m3(x: f64) -> f64 {
    round_to_binary_format(x, 3, -6, FP8_E4M3_MAX)
}

/// Binary32 rounding, saturating at the largest finite binary32 value.
pub fn round_to_fp32(x: f64) -> f64 {
    round_to_binary_format(x, 23, -126, f32::MAX as f64)
}

/// Round half-to-even, then clamp to the `bits`-wide integer range.
pub fn clamp_round_int(x: f64, bits: u32, signed: bool) -> i64 {
    assert!((1..=32).contains(&bits), "integer width {bits} outside 1..=32");
    let (lo, hi) = if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    };
    let r = x.round_ties_even();
    if r <= lo as f64 {
        lo
    } else if r >= hi as f64 {
        hi
    } else {
        r as i64
    }
}

/// Binary16 bit pattern of a value already representable in binary16.
pub fn fp16_bits(x: f64) -> u16 {
    half::f16::from_f64(x).to_bits()
}

pub fn fp16_from_bits(bits: u16) -> f64 {
    half::f16::from_bits(bits).to_f64()
}

/// E4M3 bit pattern (1 sign, 4 exponent with bias 7, 3 fraction bits) of a
/// representable value.
pub fn fp8_e4m3_bits(x: f64) -> u8 {
    let sign = if x.is_sign_negative() { 0x80 } else { 0 };
    let a = x.abs();
    if a == 0.0 {
        return sign;
    }
    let biased = ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    if biased < -6 {
        // subnormal: value = frac * 2^-9
        let frac = (a / 2f64.powi(-9)) as u8;
        return sign | frac;
    }
    let frac = ((a / 2f64.powi(biased) - 1.0) * 8.0) as u8;
    sign | (((biased + 7) as u8) << 3) | frac
}

pub fn fp8_e4m3_from_bits(bits: u8) -> f64 {
    let sign = if bits & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 3) & 0x0f) as i32;
    let frac = (bits & 0x07) as f64;
    let mag = if exp == 0 {
        frac * 2f64.powi(-9)
    } else {
        (1.0 + frac / 8.0) * 2f64.powi(exp - 7)
    };
    sign * mag
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force nearest-even search over an explicit value grid.
    fn nearest_on_grid(x: f64, grid: &[f64], is_even: impl Fn(usize) -> bool) -> f64 {
        let mut best = 0;
        for (i, &g) in grid.iter().enumerate() {
            let d = (g - x).abs();
            let bd = (grid[best] - x).abs();
            if d < bd || (d == bd && is_even(i) && !is_even(best)) {
                best = i;
            }
        }
        grid[best]
    }

    fn e4m3_positive_grid() -> Vec<f64> {
        (0u8..0x7f).map(fp8_e4m3_from_bits).collect()
    }

    #[test]
    fn fp16_examples() {
        assert_eq!(round_to_fp16(1.0), 1.0);
        assert_eq!(round_to_fp16(0.1), 0.0999755859375);
        assert_eq!(round_to_fp16(70000.0), 65504.0);
        assert_eq!(round_to_fp16(-70000.0), -65504.0);
    }

    #[test]
    fn fp8_examples() {
        assert_eq!(round_to_fp8_e4m3(0.0), 0.0);
        assert_eq!(round_to_fp8_e4m3(3.1), 3.0);
        assert_eq!(round_to_fp8_e4m3(1000.0), 448.0);
    }

    #[test]
    fn fp8_matches_grid_search() {
        // grid index parity equals bit-pattern parity, i.e. last fraction bit
        let grid = e4m3_positive_grid();
        for i in 0..4000 {
            let x = i as f64 * 0.1173;
            let expect = nearest_on_grid(x.min(448.0), &grid, |j| j % 2 == 0);
            assert_eq!(round_to_fp8_e4m3(x), expect, "x = {x}");
            assert_eq!(round_to_fp8_e4m3(-x), -expect);
        }
    }

    #[test]
    fn fp8_bits_roundtrip() {
        for b in 0u8..=0xff {
            if b & 0x7f == 0x7f {
                continue; // NaN encodings
            }
            let v = fp8_e4m3_from_bits(b);
            assert_eq!(fp8_e4m3_bits(v), b, "bits {b:#x}");
            assert_eq!(round_to_fp8_e4m3(v), v);
        }
    }

    #[test]
    fn clamp_round_examples() {
        assert_eq!(clamp_round_int(2.5, 8, true), 2);
        assert_eq!(clamp_round_int(3.5, 8, true), 4);
        assert_eq!(clamp_round_int(200.0, 8, true), 127);
        assert_eq!(clamp_round_int(-200.0, 8, true), -128);
        assert_eq!(clamp_round_int(-0.4, 2, false), 0);
        assert_eq!(clamp_round_int(9.0, 2, false), 3);
    }

    #[test]
    fn dtype_tokens_roundtrip() {
        for d in Dtype::ALL {
            assert_eq!(d.token().parse::<Dtype>().unwrap(), d);
        }
        assert!("bf16".parse::<Dtype>().is_err());
    }

    #[test]
    fn fixed_point_units_cover_subnormals() {
        let unit = Dtype::Fp16.fixed_point_unit().unwrap();
        let tiny = fp16_from_bits(1);
        assert_eq!(tiny, unit);
        let unit8 = Dtype::Fp8E4m3.fixed_point_unit().unwrap();
        assert_eq!(fp8_e4m3_from_bits(1), unit8);
    }
}
