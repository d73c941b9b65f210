mod common;

use lutcore::isa::{execute_lmma, parse_lmma};
use lutcore::lut::{lut_mpgemm, reference_mpgemm, ActivationTile, GemmConfig, LutWeights};
use lutcore::quantizer::{QuantMode, QuantParams, QuantizedWeights};
use lutcore::{Dtype, Error, Matrix};

use common::{random_activations, random_weights, rng};

#[test]
fn one_hot_rows_select_weight_columns() {
    let instr = parse_lmma("lmma.m4n8k4.fp16.int3.fp32.fp32").unwrap();
    let qw = random_weights(&mut rng(1), 8, 4, 3, QuantMode::Asymmetric);
    let w = LutWeights::new(&qw.reinterpret_symmetric().unwrap(), 4).unwrap();
    let a = ActivationTile::new(Matrix::from_fn(4, 4, |r, c| (r == c) as u8 as f64), Dtype::Fp16).unwrap();
    let o = execute_lmma(&instr, &a, &w, &Matrix::zeros(4, 8)).unwrap();
    let deq = qw.dequantize();
    for r in 0..4 {
        for n in 0..8 {
            assert_eq!(o.get(r, n), Dtype::Fp32.cast(deq.get(n, r)));
        }
    }
}

#[test]
fn zero_weights_pass_accumulator_through() {
    let instr = parse_lmma("lmma.m2n4k4.int8.int2.int32.int8").unwrap();
    // symmetric 2-bit zero-point is 1.5, so no code dequantizes to zero;
    // use an integer zero-point and the matching code instead
    let qw = QuantizedWeights::from_codes(
        4,
        4,
        vec![1; 16],
        QuantParams {
            w_bits: 2,
            scale: vec![0.5; 4],
            zero: vec![1.0; 4],
        },
    )
    .unwrap();
    let w = LutWeights::new(&qw.reinterpret_symmetric().unwrap(), 4).unwrap();
    let a = random_activations(&mut rng(2), 2, 4, Dtype::Int8);
    let accum = Matrix::from_fn(2, 4, |_, _| 300.6);
    let o = execute_lmma(&instr, &a, &w, &accum).unwrap();
    // int32 accumulator rounds to 301, int8 output saturates
    assert!(o.as_slice().iter().all(|&v| v == 127.0));
    let wide = parse_lmma("lmma.m2n4k4.int8.int2.int32.int32").unwrap();
    let o = execute_lmma(&wide, &a, &w, &accum).unwrap();
    assert!(o.as_slice().iter().all(|&v| v == 301.0));
}

#[test]
fn matches_reference_plus_accum() {
    let instr = parse_lmma("lmma.m2n64k4.int8.int2.int32.int32").unwrap();
    let mut r = rng(3);
    let a = random_activations(&mut r, 2, 4, Dtype::Int8);
    let qw = random_weights(&mut r, 64, 4, 2, QuantMode::Symmetric);
    let w = LutWeights::new(&qw.reinterpret_symmetric().unwrap(), 4).unwrap();
    let accum = Matrix::from_fn(2, 64, |i, j| (i * 64 + j) as f64 - 50.0);
    let o = execute_lmma(&instr, &a, &w, &accum).unwrap();
    let reference = reference_mpgemm(&a, &qw, &GemmConfig::default()).unwrap();
    for i in 0..2 {
        for j in 0..64 {
            let expect = lutcore::numerics::clamp_round_int(reference.get(i, j) + accum.get(i, j), 32, true);
            assert_eq!(o.get(i, j), expect as f64);
        }
    }
}

#[test]
fn zero_accum_equals_cast_product() {
    let instr = parse_lmma("lmma.m3n5k8.fp16.int4.fp32.fp16").unwrap();
    let mut r = rng(4);
    let a = random_activations(&mut r, 3, 8, Dtype::Fp16);
    let qw = random_weights(&mut r, 5, 8, 4, QuantMode::Asymmetric);
    let w = LutWeights::new(&qw.reinterpret_symmetric().unwrap(), 8).unwrap();
    let o = execute_lmma(&instr, &a, &w, &Matrix::zeros(3, 5)).unwrap();
    let p = lut_mpgemm(&a, &w, &GemmConfig::with_group(8)).unwrap();
    assert_eq!(o, p.map(|v| Dtype::Fp16.cast(Dtype::Fp32.cast(v))));
}

#[test]
fn operand_mismatches_are_rejected() {
    let instr = parse_lmma("lmma.m2n4k4.int8.int2.int32.int32").unwrap();
    let mut r = rng(5);
    let a = random_activations(&mut r, 2, 4, Dtype::Int8);
    let qw = random_weights(&mut r, 4, 4, 2, QuantMode::Symmetric);
    let w = LutWeights::new(&qw.reinterpret_symmetric().unwrap(), 4).unwrap();
    assert!(matches!(
        execute_lmma(&instr, &a, &w, &Matrix::zeros(2, 3)),
        Err(Error::ShapeMismatch(_))
    ));
    let fp = random_activations(&mut r, 2, 4, Dtype::Fp16);
    assert!(execute_lmma(&instr, &fp, &w, &Matrix::zeros(2, 4)).is_err());
    let w3 = LutWeights::new(
        &random_weights(&mut r, 4, 4, 3, QuantMode::Symmetric).reinterpret_symmetric().unwrap(),
        4,
    )
    .unwrap();
    assert!(execute_lmma(&instr, &a, &w3, &Matrix::zeros(2, 4)).is_err());
}
