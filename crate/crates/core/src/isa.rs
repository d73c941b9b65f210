//! LMMA: the warp-level tile instruction `O[M,N] = A[M,K] x W[N,K]^T + Accum[M,N]`.
//!
//! Text form: `lmma.m<M>n<N>k<K>.<a>.<w>.<accum>.<o>`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lut::{lut_mpgemm, ActivationTile, GemmConfig, LutWeights};
use crate::numerics::Dtype;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LmmaInstruction {
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub a_dtype: Dtype,
    pub w_dtype: Dtype,
    pub accum_dtype: Dtype,
    pub o_dtype: Dtype,
}

fn rule(msg: &str) -> Error {
    Error::InstructionRule(msg.to_string())
}

impl LmmaInstruction {
    pub fn new(
        (m, n, k): (u32, u32, u32),
        a_dtype: Dtype,
        w_dtype: Dtype,
        accum_dtype: Dtype,
        o_dtype: Dtype,
    ) -> Result<Self> {
        let instr = LmmaInstruction {
            m,
            n,
            k,
            a_dtype,
            w_dtype,
            accum_dtype,
            o_dtype,
        };
        instr.validate()?;
        Ok(instr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(rule("tile dimensions must be positive"));
        }
        if !self.w_dtype.is_weight() {
            return Err(rule("weight dtype must be int1-int4"));
        }
        if !self.a_dtype.is_activation() {
            return Err(rule("activation dtype must be fp16, fp8, int8 or int16"));
        }
        if !matches!(self.accum_dtype, Dtype::Fp32 | Dtype::Int32) {
            return Err(rule("accumulator dtype must be fp32 or int32"));
        }
        if !matches!(
            self.o_dtype,
            Dtype::Fp16 | Dtype::Fp32 | Dtype::Int8 | Dtype::Int32
        ) {
            return Err(rule("output dtype must be fp16, fp32, int8 or int32"));
        }
        let float_a = self.a_dtype.is_float();
        if self.accum_dtype.is_float() != float_a || self.o_dtype.is_float() != float_a {
            return Err(rule(if float_a {
                "float activations require float accumulator and output"
            } else {
                "integer activations require integer accumulator and output"
            }));
        }
        Ok(())
    }

    pub fn encode(&self) -> String {
        self.to_string()
    }

    /// Tile shape `(m, n, k)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m as usize, self.n as usize, self.k as usize)
    }
}

impl fmt::Display for LmmaInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lmma.m{}n{}k{}.{}.{}.{}.{}",
            self.m, self.n, self.k, self.a_dtype, self.w_dtype, self.accum_dtype, self.o_dtype
        )
    }
}

impl FromStr for LmmaInstruction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_lmma(s)
    }
}

fn syntax(text: &str, reason: impl Into<String>) -> Error {
    Error::InstructionSyntax {
        text: text.to_string(),
        reason: reason.into(),
    }
}

/// Parse `<letter><digits>` from the front of `s`.
fn take_dim<'a>(text: &str, s: &'a str, letter: char) -> Result<(u32, &'a str)> {
    let rest = s
        .strip_prefix(letter)
        .ok_or_else(|| syntax(text, format!("expected `{letter}` in shape")))?;
    let end = rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len());
    let digits = &rest[..end];
    if digits.is_empty() {
        return Err(syntax(text, format!("missing value after `{letter}`")));
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return Err(syntax(text, format!("leading zero in `{letter}{digits}`")));
    }
    let v: u32 = digits
        .parse()
        .map_err(|_| syntax(text, format!("`{letter}{digits}` out of range")))?;
    if v == 0 {
        return Err(syntax(text, format!("`{letter}` must be positive")));
    }
    Ok((v, &rest[end..]))
}

pub fn parse_lmma(text: &str) -> Result<LmmaInstruction> {
    let parts: Vec<&str> = text.split('.').collect();
    if parts.len() != 6 {
        return Err(syntax(
            text,
            format!("expected 6 dot-separated fields, found {}", parts.len()),
        ));
    }
    if parts[0] != "lmma" {
        return Err(syntax(text, "opcode must be `lmma`"));
    }
    let (m, rest) = take_dim(text, parts[1], 'm')?;
    let (n, rest) = take_dim(text, rest, 'n')?;
    let (k, rest) = take_dim(text, rest, 'k')?;
    if !rest.is_empty() {
        return Err(syntax(text, format!("trailing `{rest}` in shape")));
    }
    let mut dt = [Dtype::Fp16; 4];
    for (slot, tok) in dt.iter_mut().zip(&parts[2..]) {
        *slot = tok
            .parse()
            .map_err(|_| syntax(text, format!("unknown dtype `{tok}`")))?;
    }
    LmmaInstruction::new((m, n, k), dt[0], dt[1], dt[2], dt[3])
}

/// Every legal `(a, w, accum, o)` dtype combination.
pub fn valid_dtype_combinations() -> Vec<(Dtype, Dtype, Dtype, Dtype)> {
    let mut out = Vec::new();
    for a in Dtype::ALL {
        for w in Dtype::ALL {
            for acc in Dtype::ALL {
                for o in Dtype::ALL {
                    if LmmaInstruction::new((1, 1, 1), a, w, acc, o).is_ok() {
                        out.push((a, w, acc, o));
                    }
                }
            }
        }
    }
    out
}

fn cast_int32(x: f64) -> f64 {
    crate::numerics::clamp_round_int(x, 32, true) as f64
}

fn cast_to(d: Dtype, x: f64) -> f64 {
    match d {
        Dtype::Int32 => cast_int32(x),
        other => other.cast(x),
    }
}

/// Run one instruction. The product goes through the LUT engine with group
/// length `k`; the sum with `accum` is rounded to the accumulator format and
/// then to the output format.
pub fn execute_lmma(
    instr: &LmmaInstruction,
    a: &ActivationTile,
    w: &LutWeights,
    accum: &Matrix,
) -> Result<Matrix> {
    instr.validate()?;
    let (m, n, k) = instr.shape();
    if a.dtype() != instr.a_dtype {
        return Err(Error::InvalidArgument(format!(
            "activation tile is {}, instruction expects {}",
            a.dtype(),
            instr.a_dtype
        )));
    }
    if w.w_bits() != instr.w_dtype.bit_width() {
        return Err(Error::InvalidArgument(format!(
            "weight tile has {} bits, instruction expects {}",
            w.w_bits(),
            instr.w_dtype
        )));
    }
    if a.values().shape() != (m, k) || (w.n_out(), w.k_dim()) != (n, k) || accum.shape() != (m, n)
    {
        return Err(Error::ShapeMismatch(format!(
            "{instr} needs A {m}x{k}, W {n}x{k}, accum {m}x{n}; got A {:?}, W {:?}, accum {:?}",
            a.values().shape(),
            (w.n_out(), w.k_dim()),
            accum.shape()
        )));
    }
    let product = lut_mpgemm(a, w, &GemmConfig::with_group(k))?;
    let mut out = product;
    for (o, &c) in out.as_mut_slice().iter_mut().zip(accum.as_slice()) {
        *o = cast_to(instr.o_dtype, cast_to(instr.accum_dtype, *o + c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let i = parse_lmma("lmma.m2n64k4.fp16.int1.fp32.fp16").unwrap();
        assert_eq!(
            (i.m, i.n, i.k, i.a_dtype, i.w_dtype, i.accum_dtype, i.o_dtype),
            (2, 64, 4, Dtype::Fp16, Dtype::Int1, Dtype::Fp32, Dtype::Fp16)
        );
        assert!(parse_lmma("lmma.m2n64k4.int8.int2.int32.int32").is_ok());
        let e = parse_lmma("lmma.m2n64k4.int8.fp16.int32.int32").unwrap_err();
        assert!(e.to_string().contains("weight dtype must be int1-int4"), "{e}");
    }

    #[test]
    fn encode_examples() {
        let i = LmmaInstruction::new((4, 32, 4), Dtype::Int8, Dtype::Int4, Dtype::Int32, Dtype::Int8)
            .unwrap();
        assert_eq!(i.encode(), "lmma.m4n32k4.int8.int4.int32.int8");
    }

    #[test]
    fn combination_count() {
        // 2 float activations x 4 weights x {fp32} x {fp16, fp32}, same for integers
        assert_eq!(valid_dtype_combinations().len(), 32);
    }

    #[test]
    fn roundtrip_all_combinations() {
        for (a, w, acc, o) in valid_dtype_combinations() {
            for shape in [(2, 64, 4), (8, 4, 16)] {
                let i = LmmaInstruction::new(shape, a, w, acc, o).unwrap();
                assert_eq!(parse_lmma(&i.encode()).unwrap(), i);
            }
        }
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "",
            "lmma",
            "LMMA.m2n64k4.fp16.int1.fp32.fp16",
            "lmma.m2n64k4.fp16.int1.fp32",
            "lmma.m2n64k4.fp16.int1.fp32.fp16.",
            "lmma.m2n64.fp16.int1.fp32.fp16",
            "lmma.n64m2k4.fp16.int1.fp32.fp16",
            "lmma.m02n64k4.fp16.int1.fp32.fp16",
            "lmma.m0n64k4.fp16.int1.fp32.fp16",
            "lmma.m2n64k4x.fp16.int1.fp32.fp16",
            "lmma.m2n64k4.fp16.int1.fp32.bf16",
            "lmma.m2n64k4.fp16.int1.int32.fp16",
            "lmma.m2n64k4.int8.int1.fp32.fp32",
            "lmma.m2n64k4.fp16.int8.fp32.fp16",
            "lmma.m2n64k4.int4.int1.int32.int32",
            "lmma.m2n64k4.fp16.int1.fp16.fp16",
            "lmma.m99999999999n1k4.fp16.int1.fp32.fp16",
            " lmma.m2n64k4.fp16.int1.fp32.fp16",
        ] {
            assert!(parse_lmma(bad).is_err(), "accepted {bad:?}");
        }
    }
}
