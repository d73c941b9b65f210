//! Roofline latency model over operator graphs.
//!
//! Each operator costs `max(flops / peak, bytes / bandwidth)`. Operators run
//! one after another. A tensor is charged once when its producer writes it
//! and once per consumer read. Inside a fused node the intermediates stay on
//! chip: each part still takes its own roofline max, over only the traffic
//! that crosses the node boundary, and the parts are summed.

use serde::{Deserialize, Serialize};

use crate::dfg::{infer_kind, Dfg, ElementwiseFn, FusedPart, Kind, Node, Op};
use crate::error::{Error, Result};
use crate::numerics::Dtype;

/// Key used for vector-unit work (elementwise, table precompute).
pub const VECTOR_UNIT: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRate {
    pub a_dtype: String,
    pub w_dtype: String,
    pub ops_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(rename = "mem_bandwidth_Bps")]
    pub mem_bandwidth: f64,
    #[serde(rename = "on_chip_bytes")]
    pub on_chip_capacity: u64,
    pub peaks: Vec<PeakRate>,
}

const BUNDLED_HW: &[(&str, &str)] = &[
    ("a100", include_str!("../data/hw/a100.json")),
    ("a100-lut-4x", include_str!("../data/hw/a100-lut-4x.json")),
];

impl HwConfig {
    pub fn from_json(s: &str) -> Result<HwConfig> {
        let hw: HwConfig = serde_json::from_str(s)?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn bundled(name: &str) -> Option<HwConfig> {
        BUNDLED_HW
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| HwConfig::from_json(s).expect("bundled hardware configs are valid"))
    }

    pub fn bundled_names() -> Vec<&'static str> {
        BUNDLED_HW.iter().map(|(n, _)| *n).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(format!("hw `{}`: {what}", self.name)));
        if !(self.mem_bandwidth.is_finite() && self.mem_bandwidth > 0.0) {
            return bad("bandwidth must be positive".into());
        }
        for p in &self.peaks {
            if !(p.ops_per_s.is_finite() && p.ops_per_s > 0.0) {
                return bad(format!("peak ({}, {}) must be positive", p.a_dtype, p.w_dtype));
            }
        }
        Ok(())
    }

    pub fn peak(&self, a_dtype: &str, w_dtype: &str) -> Result<f64> {
        self.peaks
            .iter()
            .find(|p| p.a_dtype == a_dtype && p.w_dtype == w_dtype)
            .map(|p| p.ops_per_s)
            .ok_or_else(|| Error::MissingPeak {
                hw: self.name.clone(),
                a_dtype: a_dtype.into(),
                w_dtype: w_dtype.into(),
            })
    }

    /// Copy with every peak multiplied by `factor`.
    pub fn scale_compute(&self, factor: f64) -> HwConfig {
        let mut hw = self.clone();
        hw.peaks.iter_mut().for_each(|p| p.ops_per_s *= factor);
        hw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Mpgemm,
    Gemm,
    Elementwise,
    Precompute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpProfile {
    pub kind: OpKind,
    pub a_dtype: String,
    pub w_dtype: String,
    pub flops: f64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

impl OpProfile {
    pub fn bytes(&self) -> u64 {
        self.bytes_in + self.bytes_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Compute,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub compute_s: f64,
    pub memory_s: f64,
    pub latency_s: f64,
    pub bound: Bound,
}

pub fn op_latency(p: &OpProfile, hw: &HwConfig) -> Result<Timing> {
    let peak = hw.peak(&p.a_dtype, &p.w_dtype)?;
    let compute_s = p.flops / peak;
    let memory_s = p.bytes() as f64 / hw.mem_bandwidth;
    let (latency_s, bound) = if compute_s >= memory_s {
        (compute_s, Bound::Compute)
    } else {
        (memory_s, Bound::Memory)
    };
    Ok(Timing {
        compute_s,
        memory_s,
        latency_s,
        bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimOptions {
    /// Charge activation reloads when a matmul's operands exceed on-chip
    /// capacity.
    pub tiling_aware: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub id: String,
    pub op: String,
    pub flops: f64,
    pub bytes: u64,
    pub compute_s: f64,
    pub memory_s: f64,
    pub latency_s: f64,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub hw: String,
    pub ops: Vec<OpRecord>,
    pub total_latency_s: f64,
    pub total_flops: f64,
    pub total_bytes: u64,
    /// Main-memory bytes avoided by keeping fused intermediates on chip.
    pub fusion_savings_bytes: u64,
}

impl SimReport {
    pub fn latency_of(&self, pred: impl Fn(&OpRecord) -> bool) -> f64 {
        self.ops.iter().filter(|r| pred(r)).map(|r| r.latency_s).sum()
    }

    pub fn roofline_csv(&self) -> String {
        let mut s = String::from("op,intensity_flops_per_byte,perf_ops_per_s,bound\n");
        for r in &self.ops {
            let intensity = if r.bytes == 0 {
                f64::INFINITY
            } else {
                r.flops / r.bytes as f64
            };
            let perf = if r.latency_s > 0.0 {
                r.flops / r.latency_s
            } else {
                0.0
            };
            let bound = match r.bound {
                Bound::Compute => "compute",
                Bound::Memory => "memory",
            };
            s.push_str(&format!("{},{:e},{:e},{bound}\n", r.id, intensity, perf));
        }
        s
    }
}

fn weight_token(bits: u32) -> String {
    Dtype::weight_for_bits(bits)
        .map(|d| d.token().to_string())
        .unwrap_or_else(|| format!("int{bits}"))
}

/// Activation reloads when `a` must be streamed once per weight chunk of
/// half the on-chip capacity.
fn reload_traffic(a_bytes: u64, w_bytes: u64, capacity: u64) -> u64 {
    let half = (capacity / 2).max(1);
    if a_bytes + w_bytes <= capacity || a_bytes <= half {
        a_bytes + w_bytes
    } else {
        a_bytes * w_bytes.div_ceil(half).max(1) + w_bytes
    }
}

/// Profile of one operator. `charge_in` / `charge_out` say whether its
/// inputs / output cross the main-memory boundary.
fn profile_op(
    op: &Op,
    ins: &[Kind],
    out: &Kind,
    charge_in: bool,
    charge_out: bool,
    hw: &HwConfig,
    opts: &SimOptions,
) -> Option<OpProfile> {
    let in_bytes: u64 = ins.iter().map(Kind::bytes).sum();
    let gemm_bytes = |a: u64, w: u64| {
        if opts.tiling_aware {
            reload_traffic(a, w, hw.on_chip_capacity)
        } else {
            a + w
        }
    };
    let (kind, a_dtype, w_dtype, flops, bytes_in) = match op {
        Op::Input { .. } | Op::Output {} | Op::Fused { .. } => return None,
        Op::Elementwise { func, dtype, .. } => (
            OpKind::Elementwise,
            dtype.token().to_string(),
            VECTOR_UNIT.to_string(),
            func.flops_per_element() * out.elements() as f64,
            in_bytes,
        ),
        Op::Matmul {
            m,
            n,
            k,
            batch,
            dtype,
        } => {
            let bits = dtype.bit_width() as u64;
            let a = ((batch * m * k) as u64 * bits).div_ceil(8);
            let b = ((batch * n * k) as u64 * bits).div_ceil(8);
            (
                OpKind::Gemm,
                dtype.token().to_string(),
                dtype.token().to_string(),
                2.0 * (*batch as f64) * (*m as f64) * (*n as f64) * (*k as f64),
                gemm_bytes(a, b),
            )
        }
        Op::Mpgemm {
            m,
            n,
            k,
            a_dtype,
            w_bits,
            ..
        }
        | Op::LutMpgemm {
            m,
            n,
            k,
            a_dtype,
            w_bits,
            ..
        } => (
            OpKind::Mpgemm,
            a_dtype.token().to_string(),
            weight_token(*w_bits),
            2.0 * (*m as f64) * (*n as f64) * (*k as f64),
            gemm_bytes(ins[0].bytes(), ins[1].bytes()),
        ),
        Op::Precompute {
            m,
            k,
            a_dtype,
            group,
            ..
        } => (
            OpKind::Precompute,
            a_dtype.token().to_string(),
            VECTOR_UNIT.to_string(),
            // one K-term signed sum per stored entry
            (*m as f64) * (*k as f64) * (1u64 << (group - 1)) as f64,
            in_bytes,
        ),
    };
    Some(OpProfile {
        kind,
        a_dtype,
        w_dtype,
        flops,
        bytes_in: if charge_in { bytes_in } else { 0 },
        bytes_out: if charge_out { out.bytes() } else { 0 },
    })
}

fn combine(id: &str, op: &str, parts: &[(OpProfile, Timing)]) -> OpRecord {
    let dominant = parts
        .iter()
        .max_by(|a, b| a.1.latency_s.total_cmp(&b.1.latency_s))
        .map_or(Bound::Memory, |p| p.1.bound);
    OpRecord {
        id: id.to_string(),
        op: op.to_string(),
        flops: parts.iter().map(|p| p.0.flops).sum(),
        bytes: parts.iter().map(|p| p.0.bytes()).sum(),
        compute_s: parts.iter().map(|p| p.1.compute_s).sum(),
        memory_s: parts.iter().map(|p| p.1.memory_s).sum(),
        latency_s: parts.iter().map(|p| p.1.latency_s).sum(),
        bound: dominant,
    }
}

fn fused_name(parts: &[FusedPart]) -> String {
    let names: Vec<&str> = parts.iter().map(|p| p.op.name()).collect();
    format!("fused({})", names.join("+"))
}

pub fn simulate_graph(g: &Dfg, hw: &HwConfig) -> Result<SimReport> {
    simulate_graph_with(g, hw, &SimOptions::default())
}

pub fn simulate_graph_with(g: &Dfg, hw: &HwConfig, opts: &SimOptions) -> Result<SimReport> {
    hw.validate()?;
    let a = g.analyze()?;
    let mut ops = Vec::new();
    let mut savings = 0u64;
    for &i in &a.order {
        let Node { id, op, inputs } = &g.nodes[i];
        let ins: Vec<Kind> = inputs.iter().map(|x| a.kinds[a.index[x]]).collect();
        let out = a.kinds[i];
        match op {
            Op::Fused { parts } => {
                let mut timed = Vec::with_capacity(parts.len());
                let mut cur_in = ins.clone();
                for (pi, p) in parts.iter().enumerate() {
                    let pout = infer_kind(&p.id, &p.op, &cur_in)?;
                    let last = pi + 1 == parts.len();
                    if !last {
                        savings += 2 * pout.bytes();
                    }
                    if let Some(prof) = profile_op(&p.op, &cur_in, &pout, pi == 0, last, hw, opts) {
                        let t = op_latency(&prof, hw)?;
                        timed.push((prof, t));
                    }
                    cur_in = vec![pout];
                }
                ops.push(combine(id, &fused_name(parts), &timed));
            }
            _ => {
                if let Some(prof) = profile_op(op, &ins, &out, true, true, hw, opts) {
                    let t = op_latency(&prof, hw)?;
                    ops.push(combine(id, op.name(), &[(prof, t)]));
                }
            }
        }
    }
    Ok(SimReport {
        hw: hw.name.clone(),
        total_latency_s: ops.iter().map(|r| r.latency_s).sum(),
        total_flops: ops.iter().map(|r| r.flops).sum(),
        total_bytes: ops.iter().map(|r| r.bytes).sum(),
        fusion_savings_bytes: savings,
        ops,
    })
}

/// Cost the table build adds to a layer: `original` is the graph with
/// `mpgemm` nodes, `transformed` the split (and possibly fused) graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeOverhead {
    pub original_s: f64,
    pub transformed_s: f64,
    /// `(transformed - original) / transformed`.
    pub share: f64,
}

pub fn precompute_overhead(original: &SimReport, transformed: &SimReport) -> PrecomputeOverhead {
    let (o, t) = (original.total_latency_s, transformed.total_latency_s);
    PrecomputeOverhead {
        original_s: o,
        transformed_s: t,
        share: if t > 0.0 { (t - o) / t } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub hidden: usize,
    pub ffn: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub gated: bool,
    pub norm: String,
    pub activation: String,
    pub a_dtype: Dtype,
    pub w_bits: u32,
}

const BUNDLED_MODELS: &[(&str, &str)] = &[
    ("opt-175b", include_str!("../data/models/opt-175b.json")),
    ("bloom-176b", include_str!("../data/models/bloom-176b.json")),
    ("llama2-13b", include_str!("../data/models/llama2-13b.json")),
    ("llama2-70b", include_str!("../data/models/llama2-70b.json")),
    ("bitnet-3b", include_str!("../data/models/bitnet-3b.json")),
];

pub fn model_names() -> Vec<&'static str> {
    BUNDLED_MODELS.iter().map(|(n, _)| *n).collect()
}

pub fn load_model(name: &str) -> Result<ModelSpec> {
    let (_, s) = BUNDLED_MODELS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownModel(name.to_string()))?;
    Ok(serde_json::from_str(s)?)
}

/// One decoder layer of a bundled model with `M = batch * seq` tokens.
pub fn model_library(name: &str, batch: usize, seq: usize) -> Result<Dfg> {
    build_layer(&load_model(name)?, batch, seq, 4)
}

/// Layer graph: norm, QKV projection, two attention matmuls with softmax,
/// output projection, residual, norm, FFN up, activation, FFN down,
/// residual. Attention spans the `seq` tokens of the same step.
pub fn build_layer(spec: &ModelSpec, batch: usize, seq: usize, group: usize) -> Result<Dfg> {
    if batch == 0 || seq == 0 {
        return Err(Error::InvalidArgument("batch and seq must be positive".into()));
    }
    if spec.heads == 0 || !spec.hidden.is_multiple_of(spec.heads) || spec.kv_heads == 0 {
        return Err(Error::InvalidArgument(format!(
            "model `{}`: heads must divide hidden size",
            spec.name
        )));
    }
    let (h, f, dt) = (spec.hidden, spec.ffn, spec.a_dtype);
    let m = batch * seq;
    let d_head = h / spec.heads;
    let qkv_n = h + 2 * spec.kv_heads * d_head;
    let up_n = if spec.gated { 2 * f } else { f };
    let wdt = Dtype::weight_for_bits(spec.w_bits).ok_or_else(|| {
        Error::InvalidArgument(format!("model `{}`: w_bits {}", spec.name, spec.w_bits))
    })?;

    let node = |id: &str, op: Op, inputs: &[&str]| Node {
        id: id.to_string(),
        op,
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
    };
    let input = |id: &str, shape: [usize; 2], dtype: Dtype| node(id, Op::Input { shape, dtype }, &[]);
    let opaque = |name: &str, flops: f64, out: Option<[usize; 2]>| Op::Elementwise {
        func: ElementwiseFn::Opaque {
            name: name.to_string(),
            flops_per_element: flops,
        },
        dtype: dt,
        out_shape: out,
    };
    let mpgemm = |n: usize, k: usize| Op::Mpgemm {
        m,
        n,
        k,
        a_dtype: dt,
        w_bits: spec.w_bits,
        out_dtype: dt,
        group,
        quantize_tables: false,
    };
    let attn = |n: usize, k: usize| Op::Matmul {
        m: seq,
        n,
        k,
        batch: batch * spec.heads,
        dtype: dt,
    };
    let nodes = vec![
        input("x", [m, h], dt),
        input("w_qkv", [qkv_n, h], wdt),
        input("w_o", [h, h], wdt),
        input("w_up", [up_n, h], wdt),
        input("w_down", [h, f], wdt),
        node("norm1", opaque(&spec.norm, 4.0, None), &["x"]),
        node("qkv", mpgemm(qkv_n, h), &["norm1", "w_qkv"]),
        node("scores", attn(seq, d_head), &["qkv", "qkv"]),
        node("softmax", opaque("softmax", 5.0, None), &["scores"]),
        node("context", attn(d_head, seq), &["softmax", "qkv"]),
        node("attn_out", mpgemm(h, h), &["context", "w_o"]),
        node("resid1", opaque("add", 1.0, None), &["attn_out", "x"]),
        node("norm2", opaque(&spec.norm, 4.0, None), &["resid1"]),
        node("ffn_up", mpgemm(up_n, h), &["norm2", "w_up"]),
        node("act", opaque(&spec.activation, 5.0, Some([m, f])), &["ffn_up"]),
        node("ffn_down", mpgemm(h, f), &["act", "w_down"]),
        node("resid2", opaque("add", 1.0, None), &["ffn_down", "resid1"]),
        node("out", Op::Output {}, &["resid2"]),
    ];
    let g = Dfg {
        nodes,
        outputs: vec!["out".into()],
    };
    g.validate()?;
    Ok(g)
}

/// Mark every `mpgemm`/`precompute`/`lut_mpgemm` in `g` for int8 tables.
pub fn with_quantized_tables(g: &Dfg) -> Dfg {
    fn set(op: &mut Op) {
        match op {
            Op::Mpgemm {
                quantize_tables, ..
            }
            | Op::Precompute {
                quantize_tables, ..
            }
            | Op::LutMpgemm {
                quantize_tables, ..
            } => *quantize_tables = true,
            Op::Fused { parts } => parts.iter_mut().for_each(|p| set(&mut p.op)),
            _ => {}
        }
    }
    let mut out = g.clone();
    out.nodes.iter_mut().for_each(|n| set(&mut n.op));
    out
}
