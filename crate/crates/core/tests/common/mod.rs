#![allow(dead_code)]

use std::collections::BTreeMap;

use lutcore::dfg::{Dfg, ElementwiseFn, Node, Op, Value};
use lutcore::lut::ActivationTile;
use lutcore::quantizer::{quantize_weights, QuantMode, QuantizedWeights};
use lutcore::{Dtype, Matrix};
use rand::Rng;
use rand::SeedableRng;
use rand_pcg::Pcg64;

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Integer in `[1, max]`, log-uniform so small and large shapes both show up.
pub fn log_uniform(rng: &mut Pcg64, max: usize) -> usize {
    let x: f64 = rng.random_range(0.0..=(max as f64).ln());
    (x.exp().round() as usize).clamp(1, max)
}

pub fn random_values(rng: &mut Pcg64, rows: usize, cols: usize, dtype: Dtype) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| match dtype {
        Dtype::Int8 => rng.random_range(-128..=127) as f64,
        Dtype::Int16 => rng.random_range(-32768..=32767) as f64,
        _ => {
            // wide dynamic range, including subnormal and near-max values
            let e: i32 = rng.random_range(-26..=15);
            let m: f64 = rng.random_range(-2.0..2.0);
            dtype.cast(m * 2f64.powi(e))
        }
    })
}

pub fn random_activations(rng: &mut Pcg64, rows: usize, cols: usize, dtype: Dtype) -> ActivationTile {
    ActivationTile::new(random_values(rng, rows, cols, dtype), dtype).unwrap()
}

pub fn random_weights(
    rng: &mut Pcg64,
    rows: usize,
    cols: usize,
    w_bits: u32,
    mode: QuantMode,
) -> QuantizedWeights {
    let offset: f64 = rng.random_range(-0.5..0.5);
    let w = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0) + offset);
    quantize_weights(&w, w_bits, mode).unwrap()
}

const EW_DTYPE: Dtype = Dtype::Int8;

fn random_fn(rng: &mut Pcg64) -> ElementwiseFn {
    match rng.random_range(0..6) {
        0 => ElementwiseFn::Identity,
        1 => ElementwiseFn::AddConstant {
            value: rng.random_range(-6..=6) as f64 * 0.5,
        },
        2 => ElementwiseFn::MulConstant {
            value: [-1.0, 0.5, 2.0, 0.25][rng.random_range(0..4)],
        },
        3 => ElementwiseFn::Relu,
        4 => ElementwiseFn::SiluApprox,
        _ => ElementwiseFn::AddConstant { value: 1.0 },
    }
}

/// Random DAG over `{elementwise, mpgemm}` with int8 activations, at most
/// `max_ops` operator nodes and dimensions up to 16. Returns the graph and
/// inputs for it.
pub fn random_graph(rng: &mut Pcg64, max_ops: usize) -> (Dfg, BTreeMap<String, Value>) {
    let rows = rng.random_range(1..=4);
    let cols = rng.random_range(1..=16);
    let mut nodes = vec![Node {
        id: "x".into(),
        op: Op::Input {
            shape: [rows, cols],
            dtype: EW_DTYPE,
        },
        inputs: vec![],
    }];
    let mut inputs = BTreeMap::new();
    inputs.insert(
        "x".to_string(),
        Value::Tensor(random_values(rng, rows, cols, EW_DTYPE)),
    );
    // (id, cols) of every activation tensor so far
    let mut tensors = vec![("x".to_string(), cols)];
    let n_ops = rng.random_range(1..=max_ops);
    for i in 0..n_ops {
        let (src, c) = tensors[rng.random_range(0..tensors.len())].clone();
        let id = format!("n{i}");
        if rng.random_bool(0.5) {
            nodes.push(Node {
                id: id.clone(),
                op: Op::Elementwise {
                    func: random_fn(rng),
                    dtype: EW_DTYPE,
                    out_shape: None,
                },
                inputs: vec![src],
            });
            tensors.push((id, c));
        } else {
            let n = rng.random_range(1..=16);
            let w_bits = rng.random_range(1..=4);
            let group = rng.random_range(2..=8);
            let mode = if rng.random_bool(0.5) {
                QuantMode::Symmetric
            } else {
                QuantMode::Asymmetric
            };
            let wid = format!("w{i}");
            nodes.push(Node {
                id: wid.clone(),
                op: Op::Input {
                    shape: [n, c],
                    dtype: Dtype::weight_for_bits(w_bits).unwrap(),
                },
                inputs: vec![],
            });
            inputs.insert(
                wid.clone(),
                Value::Weights(random_weights(rng, n, c, w_bits, mode)),
            );
            nodes.push(Node {
                id: id.clone(),
                op: Op::Mpgemm {
                    m: rows,
                    n,
                    k: c,
                    a_dtype: EW_DTYPE,
                    w_bits,
                    out_dtype: EW_DTYPE,
                    group,
                    quantize_tables: false,
                },
                inputs: vec![src, wid],
            });
            tensors.push((id, n));
        }
    }
    let mut outputs = Vec::new();
    for (j, (t, _)) in tensors.iter().enumerate().skip(1) {
        if j + 1 == tensors.len() || rng.random_bool(0.3) {
            let oid = format!("out_{t}");
            nodes.push(Node {
                id: oid.clone(),
                op: Op::Output {},
                inputs: vec![t.clone()],
            });
            outputs.push(oid);
        }
    }
    (Dfg { nodes, outputs }, inputs)
}
