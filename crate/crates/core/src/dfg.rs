//! Operator-graph IR, the split/fuse passes, an interpreter and LMMA lowering.
//!
//! Graph JSON:
//!
//! ```json
//! {"nodes": [{"id": "x", "op": "input", "attrs": {"shape": [4, 8], "dtype": "int8"}, "inputs": []},
//!            ...],
//!  "outputs": ["y"]}
//! ```
//!
//! Weights enter as `input` nodes with an `int1`..`int4` dtype and shape
//! `[N, K]`; `mpgemm` and `lut_mpgemm` take `[activation, weight]`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isa::LmmaInstruction;
use crate::lut::{
    lut_mpgemm_tables, precompute_operator, reference_mpgemm, ActivationTile, GemmConfig,
    LutWeights, TableTensor,
};
use crate::numerics::Dtype;
use crate::quantizer::QuantizedWeights;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "kebab-case")]
pub enum ElementwiseFn {
    Identity,
    AddConstant { value: f64 },
    MulConstant { value: f64 },
    Relu,
    /// `x * sigmoid(x)` in binary64.
    SiluApprox,
    /// Cost-only placeholder (norms, softmax, residual adds); the
    /// interpreter refuses it.
    Opaque { name: String, flops_per_element: f64 },
}

impl ElementwiseFn {
    pub fn is_executable(&self) -> bool {
        !matches!(self, ElementwiseFn::Opaque { .. })
    }

    pub fn flops_per_element(&self) -> f64 {
        match self {
            ElementwiseFn::Identity => 0.0,
            ElementwiseFn::AddConstant { .. }
            | ElementwiseFn::MulConstant { .. }
            | ElementwiseFn::Relu => 1.0,
            ElementwiseFn::SiluApprox => 4.0,
            ElementwiseFn::Opaque {
                flops_per_element, ..
            } => *flops_per_element,
        }
    }

    fn apply(&self, x: f64) -> f64 {
        match self {
            ElementwiseFn::Identity => x,
            ElementwiseFn::AddConstant { value } => x + value,
            ElementwiseFn::MulConstant { value } => x * value,
            ElementwiseFn::Relu => x.max(0.0),
            ElementwiseFn::SiluApprox => x / (1.0 + (-x).exp()),
            ElementwiseFn::Opaque { .. } => unreachable!("opaque functions are rejected earlier"),
        }
    }
}

/// LMMA annotation attached by [`lower_to_lmma`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmaTag {
    pub instruction: String,
    pub issues: u64,
    pub tile_bytes: u64,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "attrs", rename_all = "snake_case")]
pub enum Op {
    Input {
        shape: [usize; 2],
        dtype: Dtype,
    },
    Elementwise {
        #[serde(flatten)]
        func: ElementwiseFn,
        dtype: Dtype,
        /// Only opaque functions may change the shape.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        out_shape: Option<[usize; 2]>,
    },
    /// Activation-by-activation product (attention), `batch` independent
    /// `[m, k] x [n, k]^T` products. Operands are taken as laid out by the
    /// producer; only element counts are implied.
    Matmul {
        m: usize,
        n: usize,
        k: usize,
        batch: usize,
        dtype: Dtype,
    },
    Mpgemm {
        m: usize,
        n: usize,
        k: usize,
        a_dtype: Dtype,
        w_bits: u32,
        out_dtype: Dtype,
        group: usize,
        #[serde(default, skip_serializing_if = "is_false")]
        quantize_tables: bool,
    },
    Precompute {
        m: usize,
        k: usize,
        a_dtype: Dtype,
        group: usize,
        #[serde(default, skip_serializing_if = "is_false")]
        quantize_tables: bool,
    },
    LutMpgemm {
        m: usize,
        n: usize,
        k: usize,
        a_dtype: Dtype,
        w_bits: u32,
        out_dtype: Dtype,
        group: usize,
        #[serde(default, skip_serializing_if = "is_false")]
        quantize_tables: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lmma: Option<LmmaTag>,
    },
    Output {},
    Fused {
        parts: Vec<FusedPart>,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Elementwise { .. } => "elementwise",
            Op::Matmul { .. } => "matmul",
            Op::Mpgemm { .. } => "mpgemm",
            Op::Precompute { .. } => "precompute",
            Op::LutMpgemm { .. } => "lut_mpgemm",
            Op::Output {} => "output",
            Op::Fused { .. } => "fused",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPart {
    pub id: String,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(flatten)]
    pub op: Op,
    #[serde(default)]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dfg {
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
}

/// What flows along an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Tensor {
        rows: usize,
        cols: usize,
        dtype: Dtype,
    },
    Weights {
        n: usize,
        k: usize,
        bits: u32,
    },
    Tables {
        m: usize,
        k: usize,
        group: usize,
        dtype: Dtype,
        quantized: bool,
    },
}

impl Kind {
    pub fn elements(&self) -> usize {
        match *self {
            Kind::Tensor { rows, cols, .. } => rows * cols,
            Kind::Weights { n, k, .. } => n * k,
            Kind::Tables { m, k, group, .. } => m * k.div_ceil(group) * (1 << (group - 1)),
        }
    }

    /// Main-memory footprint in bytes.
    pub fn bytes(&self) -> u64 {
        let bits = match *self {
            Kind::Tensor { dtype, .. } => dtype.bit_width(),
            Kind::Weights { bits, .. } => bits,
            Kind::Tables {
                dtype, quantized, ..
            } => {
                if quantized {
                    8
                } else {
                    dtype.bit_width()
                }
            }
        };
        (self.elements() as u64 * bits as u64).div_ceil(8)
    }
}

fn graph_err(msg: impl Into<String>) -> Error {
    Error::Graph(msg.into())
}

fn expect_tensor(id: &str, k: &Kind) -> Result<(usize, usize, Dtype)> {
    match *k {
        Kind::Tensor { rows, cols, dtype } => Ok((rows, cols, dtype)),
        other => Err(graph_err(format!("node `{id}` expects a tensor input, got {other:?}"))),
    }
}

fn check_gemm_attrs(id: &str, a_dtype: Dtype, w_bits: u32, group: usize) -> Result<()> {
    if !a_dtype.is_activation() {
        return Err(graph_err(format!("node `{id}`: {a_dtype} is not an activation format")));
    }
    if Dtype::weight_for_bits(w_bits).is_none() {
        return Err(graph_err(format!("node `{id}`: w_bits {w_bits} outside 1..=4")));
    }
    GemmConfig::with_group(group)
        .validate()
        .map_err(|e| graph_err(format!("node `{id}`: {e}")))
}

fn check_activation(id: &str, k: &Kind, m: usize, kd: usize, a_dtype: Dtype) -> Result<()> {
    let (rows, cols, dtype) = expect_tensor(id, k)?;
    if rows * cols != m * kd {
        return Err(Error::ShapeMismatch(format!(
            "node `{id}` expects {m}x{kd} activations, input is {rows}x{cols}"
        )));
    }
    if dtype != a_dtype {
        return Err(graph_err(format!(
            "node `{id}` expects {a_dtype} activations, input is {dtype}"
        )));
    }
    Ok(())
}

fn check_weights(id: &str, k: &Kind, n: usize, kd: usize, w_bits: u32) -> Result<()> {
    match *k {
        Kind::Weights { n: wn, k: wk, bits } if (wn, wk, bits) == (n, kd, w_bits) => Ok(()),
        other => Err(Error::ShapeMismatch(format!(
            "node `{id}` expects {n}x{kd} int{w_bits} weights, got {other:?}"
        ))),
    }
}

/// Output kind of `op` given its input kinds.
pub fn infer_kind(id: &str, op: &Op, inputs: &[Kind]) -> Result<Kind> {
    let arity = |want: usize| {
        if inputs.len() == want {
            Ok(())
        } else {
            Err(graph_err(format!(
                "node `{id}` ({}) takes {want} inputs, has {}",
                op.name(),
                inputs.len()
            )))
        }
    };
    match op {
        Op::Input { shape, dtype } => {
            arity(0)?;
            Ok(if dtype.is_weight() {
                Kind::Weights {
                    n: shape[0],
                    k: shape[1],
                    bits: dtype.bit_width(),
                }
            } else {
                Kind::Tensor {
                    rows: shape[0],
                    cols: shape[1],
                    dtype: *dtype,
                }
            })
        }
        Op::Elementwise {
            func,
            dtype,
            out_shape,
        } => {
            if func.is_executable() {
                arity(1)?;
            } else if inputs.is_empty() {
                return Err(graph_err(format!("node `{id}` has no inputs")));
            }
            let (rows, cols, _) = expect_tensor(id, &inputs[0])?;
            for k in &inputs[1..] {
                expect_tensor(id, k)?;
            }
            let [rows, cols] = match out_shape {
                Some(s) if func.is_executable() && *s != [rows, cols] => {
                    return Err(graph_err(format!(
                        "node `{id}`: only opaque functions may change shape"
                    )))
                }
                Some(s) => *s,
                None => [rows, cols],
            };
            Ok(Kind::Tensor {
                rows,
                cols,
                dtype: *dtype,
            })
        }
        Op::Matmul {
            m, n, batch, dtype, ..
        } => {
            arity(2)?;
            expect_tensor(id, &inputs[0])?;
            expect_tensor(id, &inputs[1])?;
            Ok(Kind::Tensor {
                rows: batch * m,
                cols: *n,
                dtype: *dtype,
            })
        }
        Op::Mpgemm {
            m,
            n,
            k,
            a_dtype,
            w_bits,
            out_dtype,
            group,
            ..
        } => {
            arity(2)?;
            check_gemm_attrs(id, *a_dtype, *w_bits, *group)?;
            check_activation(id, &inputs[0], *m, *k, *a_dtype)?;
            check_weights(id, &inputs[1], *n, *k, *w_bits)?;
            Ok(Kind::Tensor {
                rows: *m,
                cols: *n,
                dtype: *out_dtype,
            })
        }
        Op::Precompute {
            m,
            k,
            a_dtype,
            group,
            quantize_tables,
        } => {
            arity(1)?;
            check_gemm_attrs(id, *a_dtype, 1, *group)?;
            check_activation(id, &inputs[0], *m, *k, *a_dtype)?;
            Ok(Kind::Tables {
                m: *m,
                k: *k,
                group: *group,
                dtype: *a_dtype,
                quantized: *quantize_tables,
            })
        }
        Op::LutMpgemm {
            m,
            n,
            k,
            a_dtype,
            w_bits,
            out_dtype,
            group,
            quantize_tables,
            ..
        } => {
            arity(2)?;
            check_gemm_attrs(id, *a_dtype, *w_bits, *group)?;
            let want = Kind::Tables {
                m: *m,
                k: *k,
                group: *group,
                dtype: *a_dtype,
                quantized: *quantize_tables,
            };
            if inputs[0] != want {
                return Err(Error::ShapeMismatch(format!(
                    "node `{id}` expects tables {want:?}, got {:?}",
                    inputs[0]
                )));
            }
            check_weights(id, &inputs[1], *n, *k, *w_bits)?;
            Ok(Kind::Tensor {
                rows: *m,
                cols: *n,
                dtype: *out_dtype,
            })
        }
        Op::Output {} => {
            arity(1)?;
            Ok(inputs[0])
        }
        Op::Fused { parts } => {
            let (first, rest) = parts
                .split_first()
                .ok_or_else(|| graph_err(format!("fused node `{id}` has no parts")))?;
            let mut kind = infer_part(id, first, inputs)?;
            for p in rest {
                kind = infer_part(id, p, &[kind])?;
            }
            Ok(kind)
        }
    }
}

fn infer_part(id: &str, part: &FusedPart, inputs: &[Kind]) -> Result<Kind> {
    if matches!(part.op, Op::Input { .. } | Op::Output {} | Op::Fused { .. }) {
        return Err(graph_err(format!(
            "fused node `{id}` cannot contain a {} part",
            part.op.name()
        )));
    }
    infer_kind(&part.id, &part.op, inputs)
}

/// Validated view of a graph: node index by id, topological order and the
/// output kind of every node.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub order: Vec<usize>,
    pub kinds: Vec<Kind>,
    pub index: HashMap<String, usize>,
    pub consumers: Vec<Vec<usize>>,
}

impl Dfg {
    pub fn from_json(s: &str) -> Result<Dfg> {
        let g: Dfg = serde_json::from_str(s)?;
        g.analyze()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        self.analyze().map(|_| ())
    }

    /// Check ids, references, acyclicity and shapes; Kahn order, stable in
    /// node-list position.
    pub fn analyze(&self) -> Result<Analysis> {
        let mut index = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(graph_err(format!("duplicate node id `{}`", n.id)));
            }
        }
        let mut indeg = vec![0usize; self.nodes.len()];
        let mut consumers = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for inp in &n.inputs {
                let &j = index.get(inp).ok_or_else(|| {
                    graph_err(format!("node `{}` references unknown input `{inp}`", n.id))
                })?;
                indeg[i] += 1;
                consumers[j].push(i);
            }
        }
        for o in &self.outputs {
            if !index.contains_key(o) {
                return Err(graph_err(format!("unknown output `{o}`")));
            }
        }
        let mut ready: VecDeque<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_front() {
            order.push(i);
            let mut next: Vec<usize> = Vec::new();
            for &c in &consumers[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    next.push(c);
                }
            }
            next.sort_unstable();
            next.dedup();
            ready.extend(next);
        }
        if order.len() != self.nodes.len() {
            return Err(graph_err("graph contains a cycle"));
        }
        let mut kinds: Vec<Option<Kind>> = vec![None; self.nodes.len()];
        for &i in &order {
            let n = &self.nodes[i];
            let ins: Vec<Kind> = n
                .inputs
                .iter()
                .map(|x| kinds[index[x]].expect("inputs precede consumers"))
                .collect();
            kinds[i] = Some(infer_kind(&n.id, &n.op, &ins)?);
        }
        Ok(Analysis {
            order,
            kinds: kinds.into_iter().map(|k| k.expect("all visited")).collect(),
            index,
            consumers,
        })
    }
}

fn fresh_id(base: &str, taken: &HashSet<String>) -> String {
    let stem = format!("{base}.precompute");
    if !taken.contains(&stem) {
        return stem;
    }
    (2..)
        .map(|i| format!("{stem}{i}"))
        .find(|c| !taken.contains(c))
        .expect("unbounded search")
}

/// Replace every `mpgemm` by `precompute -> lut_mpgemm`. The LUT node keeps
/// the original id, so consumers and outputs are untouched.
pub fn transform_split_mpgemm(g: &Dfg) -> Dfg {
    let mut taken: HashSet<String> = g.nodes.iter().map(|n| n.id.clone()).collect();
    let mut nodes = Vec::with_capacity(g.nodes.len());
    for n in &g.nodes {
        if let Op::Mpgemm {
            m,
            n: nn,
            k,
            a_dtype,
            w_bits,
            out_dtype,
            group,
            quantize_tables,
        } = n.op
        {
            let pid = fresh_id(&n.id, &taken);
            taken.insert(pid.clone());
            nodes.push(Node {
                id: pid.clone(),
                op: Op::Precompute {
                    m,
                    k,
                    a_dtype,
                    group,
                    quantize_tables,
                },
                inputs: vec![n.inputs[0].clone()],
            });
            nodes.push(Node {
                id: n.id.clone(),
                op: Op::LutMpgemm {
                    m,
                    n: nn,
                    k,
                    a_dtype,
                    w_bits,
                    out_dtype,
                    group,
                    quantize_tables,
                    lmma: None,
                },
                inputs: vec![pid, n.inputs[1].clone()],
            });
        } else {
            nodes.push(n.clone());
        }
    }
    Dfg {
        nodes,
        outputs: g.outputs.clone(),
    }
}

/// Merge each `precompute` into its producer when that producer is an
/// elementwise node read by nothing else.
pub fn fuse_precompute(g: &Dfg) -> Result<Dfg> {
    let a = g.analyze()?;
    let outputs: HashSet<&str> = g.outputs.iter().map(String::as_str).collect();
    let mut absorbed = HashSet::new();
    let mut replaced: HashMap<usize, Node> = HashMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if !matches!(n.op, Op::Precompute { .. }) || n.inputs.len() != 1 {
            continue;
        }
        let p = a.index[&n.inputs[0]];
        let prod = &g.nodes[p];
        let eligible = matches!(prod.op, Op::Elementwise { .. })
            && a.consumers[p].len() == 1
            && !outputs.contains(prod.id.as_str());
        if !eligible {
            continue;
        }
        absorbed.insert(p);
        replaced.insert(
            i,
            Node {
                id: n.id.clone(),
                op: Op::Fused {
                    parts: vec![
                        FusedPart {
                            id: prod.id.clone(),
                            op: prod.op.clone(),
                        },
                        FusedPart {
                            id: n.id.clone(),
                            op: n.op.clone(),
                        },
                    ],
                },
                inputs: prod.inputs.clone(),
            },
        );
    }
    let nodes = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| !absorbed.contains(i))
        .map(|(i, n)| replaced.remove(&i).unwrap_or_else(|| n.clone()))
        .collect();
    Ok(Dfg {
        nodes,
        outputs: g.outputs.clone(),
    })
}

/// Runtime values supplied for input nodes and passed between nodes.
#[derive(Debug, Clone)]
pub enum Value {
    Tensor(Matrix),
    Weights(QuantizedWeights),
    Tables(TableTensor),
}

fn as_tensor<'a>(id: &str, v: &'a Value) -> Result<&'a Matrix> {
    match v {
        Value::Tensor(m) => Ok(m),
        _ => Err(graph_err(format!("node `{id}` expects a tensor value"))),
    }
}

fn as_weights<'a>(id: &str, v: &'a Value) -> Result<&'a QuantizedWeights> {
    match v {
        Value::Weights(w) => Ok(w),
        _ => Err(graph_err(format!("node `{id}` expects a weight value"))),
    }
}

fn activation(id: &str, v: &Value, m: usize, k: usize, dtype: Dtype) -> Result<ActivationTile> {
    let t = as_tensor(id, v)?;
    let reshaped = Matrix::from_vec(m, k, t.as_slice().to_vec())?;
    ActivationTile::new(reshaped, dtype).map_err(|e| graph_err(format!("node `{id}`: {e}")))
}

fn cast_out(m: Matrix, dtype: Dtype) -> Matrix {
    m.map(|v| dtype.cast(v))
}

fn eval_op(id: &str, op: &Op, ins: &[&Value]) -> Result<Value> {
    Ok(match op {
        Op::Input { .. } | Op::Fused { .. } => unreachable!("handled by the caller"),
        Op::Output {} => ins[0].clone(),
        Op::Elementwise { func, dtype, .. } => {
            if !func.is_executable() {
                return Err(graph_err(format!(
                    "node `{id}`: opaque elementwise functions cannot be executed"
                )));
            }
            let x = as_tensor(id, ins[0])?;
            Value::Tensor(x.map(|v| dtype.cast(func.apply(v))))
        }
        Op::Matmul {
            m,
            n,
            k,
            batch,
            dtype,
        } => {
            let (a, b) = (as_tensor(id, ins[0])?.as_slice(), as_tensor(id, ins[1])?.as_slice());
            if a.len() != batch * m * k || b.len() != batch * n * k {
                return Err(Error::ShapeMismatch(format!(
                    "node `{id}`: operand sizes {} and {} do not fit {batch}x[{m}x{k}]x[{n}x{k}]",
                    a.len(),
                    b.len()
                )));
            }
            let out = Matrix::from_fn(batch * m, *n, |r, c| {
                let (bt, i) = (r / m, r % m);
                let ar = &a[(bt * m + i) * k..(bt * m + i + 1) * k];
                let br = &b[(bt * n + c) * k..(bt * n + c + 1) * k];
                ar.iter().zip(br).map(|(x, y)| x * y).sum()
            });
            Value::Tensor(cast_out(out, *dtype))
        }
        Op::Mpgemm {
            m,
            k,
            a_dtype,
            out_dtype,
            group,
            ..
        } => {
            let act = activation(id, ins[0], *m, *k, *a_dtype)?;
            let w = as_weights(id, ins[1])?;
            let o = reference_mpgemm(&act, w, &GemmConfig::with_group(*group))?;
            Value::Tensor(cast_out(o, *out_dtype))
        }
        Op::Precompute {
            m,
            k,
            a_dtype,
            group,
            quantize_tables,
        } => {
            let act = activation(id, ins[0], *m, *k, *a_dtype)?;
            let cfg = GemmConfig {
                group: *group,
                quantize_tables: *quantize_tables,
            };
            Value::Tables(precompute_operator(&act, &cfg)?)
        }
        Op::LutMpgemm {
            out_dtype, group, ..
        } => {
            let Value::Tables(tables) = ins[0] else {
                return Err(graph_err(format!("node `{id}` expects precomputed tables")));
            };
            let w = as_weights(id, ins[1])?;
            // offline step: weights are reinterpreted and packed once
            let packed = if w.is_reinterpreted() {
                LutWeights::new(w, *group)?
            } else {
                LutWeights::new(&w.reinterpret_symmetric()?, *group)?
            };
            let (o, _) = lut_mpgemm_tables(tables, &packed)?;
            Value::Tensor(cast_out(o, *out_dtype))
        }
    })
}

/// Evaluate the graph and return the values of its outputs.
pub fn execute_graph(
    g: &Dfg,
    inputs: &BTreeMap<String, Value>,
) -> Result<BTreeMap<String, Matrix>> {
    let a = g.analyze()?;
    let mut values: Vec<Option<Value>> = vec![None; g.nodes.len()];
    for &i in &a.order {
        let n = &g.nodes[i];
        let v = match &n.op {
            Op::Input { shape, dtype } => {
                let v = inputs
                    .get(&n.id)
                    .ok_or_else(|| graph_err(format!("missing input `{}`", n.id)))?;
                check_input(&n.id, v, *shape, *dtype)?;
                v.clone()
            }
            Op::Fused { parts } => {
                let ins: Vec<&Value> = n
                    .inputs
                    .iter()
                    .map(|x| values[a.index[x]].as_ref().expect("topological"))
                    .collect();
                let mut cur = eval_op(&parts[0].id, &parts[0].op, &ins)?;
                for p in &parts[1..] {
                    cur = eval_op(&p.id, &p.op, &[&cur])?;
                }
                cur
            }
            op => {
                let ins: Vec<&Value> = n
                    .inputs
                    .iter()
                    .map(|x| values[a.index[x]].as_ref().expect("topological"))
                    .collect();
                eval_op(&n.id, op, &ins)?
            }
        };
        values[i] = Some(v);
    }
    g.outputs
        .iter()
        .map(|o| {
            let v = values[a.index[o]].as_ref().expect("evaluated");
            Ok((o.clone(), as_tensor(o, v)?.clone()))
        })
        .collect()
}

fn check_input(id: &str, v: &Value, shape: [usize; 2], dtype: Dtype) -> Result<()> {
    match v {
        Value::Weights(w) if dtype.is_weight() => {
            if (w.rows(), w.cols()) != (shape[0], shape[1]) || w.w_bits() != dtype.bit_width() {
                return Err(Error::ShapeMismatch(format!(
                    "input `{id}` declared {}x{} {dtype}, got {}x{} with {} bits",
                    shape[0],
                    shape[1],
                    w.rows(),
                    w.cols(),
                    w.w_bits()
                )));
            }
            Ok(())
        }
        Value::Tensor(m) if !dtype.is_weight() => {
            if m.shape() != (shape[0], shape[1]) {
                return Err(Error::ShapeMismatch(format!(
                    "input `{id}` declared {}x{}, got {:?}",
                    shape[0],
                    shape[1],
                    m.shape()
                )));
            }
            if let Some(x) = m.as_slice().iter().find(|&&x| !dtype.represents(x)) {
                return Err(graph_err(format!(
                    "input `{id}`: {x} is not representable in {dtype}"
                )));
            }
            Ok(())
        }
        _ => Err(graph_err(format!("input `{id}` has the wrong value kind"))),
    }
}

/// On-chip bytes one tile needs: activation, weight, table and accumulator
/// tiles.
pub fn tile_bytes(tile: &LmmaInstruction, quantize_tables: bool) -> u64 {
    let (m, n, k) = (tile.m as u64, tile.n as u64, tile.k as u64);
    let a_bits = tile.a_dtype.bit_width() as u64;
    let lut_bit = if quantize_tables { 8 } else { a_bits };
    let entries = 1u64.checked_shl((k - 1) as u32).unwrap_or(u64::MAX);
    let bits = [
        m.saturating_mul(k).saturating_mul(a_bits),
        n.saturating_mul(k).saturating_mul(tile.w_dtype.bit_width() as u64),
        m.saturating_mul(entries).saturating_mul(lut_bit),
        m.saturating_mul(n).saturating_mul(tile.accum_dtype.bit_width() as u64),
    ]
    .into_iter()
    .fold(0u64, u64::saturating_add);
    bits.div_ceil(8)
}

/// Tag every `lut_mpgemm` with `tile` and its issue count
/// `ceil(M/m) * ceil(N/n) * ceil(K/k)`.
pub fn lower_to_lmma(g: &Dfg, tile: &LmmaInstruction, on_chip_bytes: u64) -> Result<Dfg> {
    tile.validate()?;
    let mut out = g.clone();
    for node in &mut out.nodes {
        if let Op::LutMpgemm {
            m,
            n,
            k,
            a_dtype,
            w_bits,
            quantize_tables,
            lmma,
            ..
        } = &mut node.op
        {
            if tile.a_dtype != *a_dtype || tile.w_dtype.bit_width() != *w_bits {
                return Err(graph_err(format!(
                    "tile {tile} does not match node `{}` ({a_dtype} x int{w_bits})",
                    node.id
                )));
            }
            let needed = tile_bytes(tile, *quantize_tables);
            if needed > on_chip_bytes {
                return Err(Error::Capacity {
                    needed,
                    capacity: on_chip_bytes,
                });
            }
            let issues = (*m as u64).div_ceil(tile.m as u64)
                * (*n as u64).div_ceil(tile.n as u64)
                * (*k as u64).div_ceil(tile.k as u64);
            *lmma = Some(LmmaTag {
                instruction: tile.encode(),
                issues,
                tile_bytes: needed,
            });
        }
    }
    Ok(out)
}
