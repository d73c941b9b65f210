//! The `lutcore` command line: one subcommand per library area.
//!
//! Reports are JSON (floats written with 17 significant digits), sweeps are
//! CSV and tensors are `.lutt` files. Seeded inputs come from PCG-64.

mod util;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lutcore::dfg::{
    execute_graph, fuse_precompute, lower_to_lmma, transform_split_mpgemm, Dfg, Op, Value,
};
use lutcore::dse::{enumerate_designs, pareto_frontier, to_csv, CostWeights, DEFAULT_BUDGET};
use lutcore::isa::{execute_lmma, parse_lmma};
use lutcore::lut::{
    lut_mpgemm_with_stats, precompute_operator, reference_mpgemm, ActivationTile, GemmConfig,
    LutWeights,
};
use lutcore::perfsim::{
    model_library, precompute_overhead, simulate_graph_with, with_quantized_tables, SimOptions,
    SimReport,
};
use lutcore::quantizer::QuantMode;
use lutcore::report::to_stable_json;
use lutcore::tensorfile::TensorFile;
use lutcore::{Dtype, Matrix};

pub use util::{checksum, gemm_operands};

#[derive(Debug, Parser)]
#[command(name = "lutcore", version, about = "LUT-based mixed-precision GEMM toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one seeded LUT mpGEMM, optionally checked against the dequantizing reference.
    Gemm(GemmArgs),
    /// Sweep LUT-array tile shapes under an op budget.
    Dse(DseArgs),
    /// Roofline simulation of one decoder layer.
    Sim(SimArgs),
    /// LMMA instruction tools.
    #[command(subcommand)]
    Isa(IsaCommand),
    /// Dataflow-graph passes and execution.
    #[command(subcommand)]
    Dfg(DfgCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Symmetric,
    Asymmetric,
}

impl From<Mode> for QuantMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Symmetric => QuantMode::Symmetric,
            Mode::Asymmetric => QuantMode::Asymmetric,
        }
    }
}

#[derive(Debug, Args)]
pub struct GemmArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long = "k-dim")]
    pub k_dim: usize,
    #[arg(long = "w-bits")]
    pub w_bits: u32,
    #[arg(long = "a-dtype", default_value = "int8")]
    pub a_dtype: Dtype,
    /// Activation group length K.
    #[arg(long = "group-k", default_value_t = 4)]
    pub group_k: usize,
    /// Store tables as int8 with one scale per table.
    #[arg(long = "quant-table")]
    pub quant_table: bool,
    #[arg(long, value_enum, default_value_t = Mode::Asymmetric)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also run the reference and report the error.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct DseArgs {
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    #[arg(long = "k-min", default_value_t = 2)]
    pub k_min: u64,
    #[arg(long = "k-max", default_value_t = 8)]
    pub k_max: u64,
    #[arg(long = "lut-bit", default_value_t = 8)]
    pub lut_bit: u64,
    #[arg(long = "w-bit", default_value_t = 1)]
    pub w_bit: u64,
    #[arg(long = "a-bit", default_value_t = 16)]
    pub a_bit: u64,
    /// JSON file with cost weights; defaults are used otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Only keep the Pareto frontier.
    #[arg(long)]
    pub pareto: bool,
    /// CSV destination; without it the CSV goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 2048)]
    pub seq: usize,
    /// Hardware config file, or the name of a bundled one.
    #[arg(long, default_value = "a100")]
    pub hw: String,
    /// Split mpGEMMs and fuse the precompute into its producer.
    #[arg(long)]
    pub fuse: bool,
    #[arg(long = "quant-table")]
    pub quant_table: bool,
    #[arg(long = "tiling-aware")]
    pub tiling_aware: bool,
    /// Prefix for `<out>.json` and `<out>.csv`; the report goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum IsaCommand {
    /// Check an instruction string.
    Validate { instr: String },
    /// Write seeded operand files for an instruction.
    Example {
        #[arg(long)]
        instr: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Asymmetric)]
        mode: Mode,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Execute one instruction on operand files.
    Execute {
        #[arg(long)]
        instr: String,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        w: PathBuf,
        /// Zero when omitted.
        #[arg(long)]
        accum: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DfgCommand {
    /// Split every mpgemm into precompute + lut_mpgemm.
    Transform(InOut),
    /// Fuse precompute nodes into their producers.
    Fuse(InOut),
    /// Execute a graph on seeded inputs.
    Run {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Asymmetric)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tag lut_mpgemm nodes with an LMMA tile.
    Lower {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        instr: String,
        /// On-chip bytes available per tile.
        #[arg(long, default_value_t = 41_943_040)]
        capacity: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the graph of one bundled model layer.
    Model {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 2048)]
        seq: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct InOut {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    util::init_threads()?;
    match cli.command {
        Command::Gemm(a) => cmd_gemm(&a),
        Command::Dse(a) => cmd_dse(&a),
        Command::Sim(a) => cmd_sim(&a),
        Command::Isa(c) => cmd_isa(c),
        Command::Dfg(c) => cmd_dfg(c),
    }
}

#[derive(Debug, Serialize)]
struct GemmReport {
    m: usize,
    n: usize,
    k_dim: usize,
    w_bits: u32,
    a_dtype: Dtype,
    group_k: usize,
    quant_table: bool,
    mode: QuantMode,
    seed: u64,
    tables: u64,
    lookups: u64,
    checksum: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_abs_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_match: Option<bool>,
    /// Largest per-row analytic error bound; zero without table quantization.
    #[serde(skip_serializing_if = "Option::is_none")]
    error_bound: Option<f64>,
}

fn cmd_gemm(a: &GemmArgs) -> Result<()> {
    if !(1..=4).contains(&a.w_bits) {
        bail!("--w-bits {} is out of range: weights are limited to 1-4 bits", a.w_bits);
    }
    if a.m == 0 || a.n == 0 || a.k_dim == 0 {
        bail!("--m, --n and --k-dim must be positive");
    }
    let cfg = GemmConfig {
        group: a.group_k,
        quantize_tables: a.quant_table,
    };
    cfg.validate()?;
    let mode = QuantMode::from(a.mode);
    let (act, qw) = gemm_operands((a.m, a.n, a.k_dim), a.a_dtype, a.w_bits, mode, a.seed)?;
    let w = LutWeights::new(&qw.reinterpret_symmetric()?, a.group_k)?;
    let (out, stats) = lut_mpgemm_with_stats(&act, &w, &cfg)?;
    let mut report = GemmReport {
        m: a.m,
        n: a.n,
        k_dim: a.k_dim,
        w_bits: a.w_bits,
        a_dtype: a.a_dtype,
        group_k: a.group_k,
        quant_table: a.quant_table,
        mode,
        seed: a.seed,
        tables: stats.tables,
        lookups: stats.lookups,
        checksum: checksum(&out),
        max_abs_err: None,
        exact_match: None,
        error_bound: None,
    };
    if a.check {
        let reference = reference_mpgemm(&act, &qw, &cfg)?;
        let bound = if a.quant_table {
            let tables = precompute_operator(&act, &cfg)?;
            (0..a.m).map(|r| tables.quant_error_bound(r, &w)).fold(0.0, f64::max)
        } else {
            0.0
        };
        report.max_abs_err = Some(out.max_abs_diff(&reference));
        report.exact_match = Some(out == reference);
        report.error_bound = Some(bound);
    }
    print!("{}", to_stable_json(&report));
    Ok(())
}

fn cmd_dse(a: &DseArgs) -> Result<()> {
    if a.budget == 0 {
        bail!("--budget must be at least 1");
    }
    if a.k_min > a.k_max {
        bail!("--k-min {} exceeds --k-max {}", a.k_min, a.k_max);
    }
    let weights = match &a.weights {
        Some(p) => serde_json::from_str::<CostWeights>(&util::read_to_string(p)?)
            .with_context(|| format!("parsing cost weights {}", p.display()))?,
        None => CostWeights::default(),
    };
    let mut designs = enumerate_designs(a.budget, a.k_min..=a.k_max, a.lut_bit, a.w_bit, a.a_bit, &weights)?;
    if a.pareto {
        designs = pareto_frontier(&designs);
    }
    let csv = to_csv(&designs);
    match &a.out {
        Some(p) => {
            util::write_output(Some(p), &csv)?;
            println!("{:>4}  {:<14} {:>14} {:>14} {:>14}", "rank", "config", "proxy_cost", "table_b/op", "weight_b/op");
            for (i, d) in designs.iter().take(5).enumerate() {
                let c = &d.config;
                println!(
                    "{:>4}  {:<14} {:>14.4} {:>14.4} {:>14.4}",
                    i + 1,
                    format!("m{}n{}k{}", c.m, c.n, c.k),
                    d.cost.proxy_cost,
                    d.cost.table_bits_per_op,
                    d.cost.weight_bits_per_op
                );
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimSummary<'a> {
    model: &'a str,
    batch: usize,
    seq: usize,
    fused: bool,
    report: &'a SimReport,
    /// Graph without the split, for the overhead ratio.
    #[serde(skip_serializing_if = "Option::is_none")]
    original_total_latency_s: Option<f64>,
    /// Split graph with the precompute left as its own node.
    #[serde(skip_serializing_if = "Option::is_none")]
    unfused_total_latency_s: Option<f64>,
    /// Latency attributable to the precompute, as a share of the fused total.
    #[serde(skip_serializing_if = "Option::is_none")]
    precompute_share: Option<f64>,
}

fn cmd_sim(a: &SimArgs) -> Result<()> {
    let hw = util::load_hw(&a.hw)?;
    let mut g = model_library(&a.model, a.batch, a.seq)?;
    if a.quant_table {
        g = with_quantized_tables(&g);
    }
    let opts = SimOptions {
        tiling_aware: a.tiling_aware,
    };
    let base = simulate_graph_with(&g, &hw, &opts)?;
    let (report, original, unfused, share) = if a.fuse {
        let split = transform_split_mpgemm(&g);
        let unfused = simulate_graph_with(&split, &hw, &opts)?.total_latency_s;
        let r = simulate_graph_with(&fuse_precompute(&split)?, &hw, &opts)?;
        let ov = precompute_overhead(&base, &r);
        (r, Some(base.total_latency_s), Some(unfused), Some(ov.share))
    } else {
        (base, None, None, None)
    };
    let summary = SimSummary {
        model: &a.model,
        batch: a.batch,
        seq: a.seq,
        fused: a.fuse,
        report: &report,
        original_total_latency_s: original,
        unfused_total_latency_s: unfused,
        precompute_share: share,
    };
    let json = to_stable_json(&summary);
    match &a.out {
        Some(prefix) => {
            util::write_output(Some(&with_suffix(prefix, "json")), &json)?;
            util::write_output(Some(&with_suffix(prefix, "csv")), &report.roofline_csv())?;
            println!("total latency: {:.6e} s", report.total_latency_s);
        }
        None => print!("{json}"),
    }
    if let Some(s) = share {
        // keep stdout clean for the JSON when no prefix is given
        let line = format!("precompute overhead ratio: {:.4}%", s * 100.0);
        if a.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
    Ok(())
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
struct ExecuteReport {
    instruction: String,
    rows: usize,
    cols: usize,
    /// Checksum of `A * W^T` before accumulation and casting, comparable
    /// with `gemm`.
    product_checksum: String,
    checksum: String,
}

fn cmd_isa(c: IsaCommand) -> Result<()> {
    match c {
        IsaCommand::Validate { instr } => {
            let i = parse_lmma(&instr)?;
            println!("OK {i}");
        }
        IsaCommand::Example {
            instr,
            seed,
            mode,
            dir,
        } => {
            let i = parse_lmma(&instr)?;
            let (m, n, k) = i.shape();
            let (act, qw) = gemm_operands((m, n, k), i.a_dtype, i.w_dtype.bit_width(), mode.into(), seed)?;
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            TensorFile::from_matrix(act.values(), i.a_dtype)?.write(dir.join("a.lutt"))?;
            TensorFile::from_weights(&qw)?.write(dir.join("w.lutt"))?;
            TensorFile::from_matrix(&Matrix::zeros(m, n), i.accum_dtype)?.write(dir.join("accum.lutt"))?;
        }
        IsaCommand::Execute {
            instr,
            a,
            w,
            accum,
            out,
        } => {
            let i = parse_lmma(&instr)?;
            let (m, n, k) = i.shape();
            let af = TensorFile::read(&a).with_context(|| format!("reading {}", a.display()))?;
            let act = ActivationTile::new(af.to_matrix()?, af.dtype())?;
            let qw = TensorFile::read(&w)
                .with_context(|| format!("reading {}", w.display()))?
                .to_weights()?;
            let lw = LutWeights::new(&qw.reinterpret_symmetric()?, k)?;
            let acc = match &accum {
                Some(p) => TensorFile::read(p)
                    .with_context(|| format!("reading {}", p.display()))?
                    .to_matrix()?,
                None => Matrix::zeros(m, n),
            };
            let o = execute_lmma(&i, &act, &lw, &acc)?;
            let (product, _) = lut_mpgemm_with_stats(&act, &lw, &GemmConfig::with_group(k))?;
            TensorFile::from_matrix(&o, i.o_dtype)?.write(&out)?;
            let report = ExecuteReport {
                instruction: i.encode(),
                rows: m,
                cols: n,
                product_checksum: checksum(&product),
                checksum: checksum(&o),
            };
            print!("{}", to_stable_json(&report));
        }
    }
    Ok(())
}

fn load_graph(p: &Path) -> Result<Dfg> {
    Dfg::from_json(&util::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))
}

#[derive(Debug, Serialize)]
struct OutputTensor {
    rows: usize,
    cols: usize,
    checksum: String,
    values: Vec<Vec<f64>>,
}

fn cmd_dfg(c: DfgCommand) -> Result<()> {
    match c {
        DfgCommand::Transform(io) => {
            let g = transform_split_mpgemm(&load_graph(&io.input)?);
            util::write_output(io.out.as_deref(), &g.to_json())
        }
        DfgCommand::Fuse(io) => {
            let g = fuse_precompute(&load_graph(&io.input)?)?;
            util::write_output(io.out.as_deref(), &g.to_json())
        }
        DfgCommand::Run {
            input,
            seed,
            mode,
            out,
        } => {
            let g = load_graph(&input)?;
            let inputs = seeded_inputs(&g, seed, mode.into())?;
            let results = execute_graph(&g, &inputs)?;
            let report: BTreeMap<String, OutputTensor> = results
                .iter()
                .map(|(id, m)| {
                    let t = OutputTensor {
                        rows: m.rows(),
                        cols: m.cols(),
                        checksum: checksum(m),
                        values: (0..m.rows()).map(|r| m.row(r).to_vec()).collect(),
                    };
                    (id.clone(), t)
                })
                .collect();
            util::write_output(out.as_deref(), &to_stable_json(&report))
        }
        DfgCommand::Lower {
            input,
            instr,
            capacity,
            out,
        } => {
            let g = lower_to_lmma(&load_graph(&input)?, &parse_lmma(&instr)?, capacity)?;
            util::write_output(out.as_deref(), &g.to_json())
        }
        DfgCommand::Model {
            name,
            batch,
            seq,
            out,
        } => util::write_output(out.as_deref(), &model_library(&name, batch, seq)?.to_json()),
    }
}

/// One value per input node, drawn in node order from a single stream.
fn seeded_inputs(g: &Dfg, seed: u64, mode: QuantMode) -> Result<BTreeMap<String, Value>> {
    let mut rng = util::rng(seed);
    let mut out = BTreeMap::new();
    for node in &g.nodes {
        if let Op::Input { shape: [r, c], dtype } = &node.op {
            let v = if dtype.is_weight() {
                Value::Weights(util::random_weights(&mut rng, *r, *c, dtype.bit_width(), mode)?)
            } else {
                Value::Tensor(util::random_activations(&mut rng, *r, *c, *dtype)?.values().clone())
            };
            out.insert(node.id.clone(), v);
        }
    }
    Ok(out)
}
