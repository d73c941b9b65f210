//! LUT-array sizing and tile-geometry exploration.
//!
//! An `M x N x K` array holds `M` symmetric tables of `2^(K-1)` entries, each
//! entry broadcast to `N` select lanes, and a `K x N` buffer of one-bit
//! weight groups. The proxy cost is a weighted sum of storage, select,
//! accumulator and broadcast terms. The weights are configurable stand-ins,
//! not synthesized silicon numbers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BUDGET: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LutArrayConfig {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub lut_bit: u64,
    pub w_bit: u64,
    pub a_bit: u64,
}

impl LutArrayConfig {
    pub fn ops(&self) -> u64 {
        self.m * self.n * self.k
    }
}

/// Per-unit weights of the proxy cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub table_bit: f64,
    pub weight_bit: f64,
    pub mux2: f64,
    /// Per accumulator bit-cell; an adder lane counts `accum_bits` cells.
    pub adder: f64,
    /// Per bit delivered to one consumer by a broadcast.
    pub fanout: f64,
    pub accum_bits: u64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            table_bit: 1.0,
            weight_bit: 1.0,
            mux2: 0.5,
            adder: 4.0,
            fanout: 0.1,
            accum_bits: 32,
        }
    }
}

impl CostWeights {
    pub fn zero() -> Self {
        CostWeights {
            table_bit: 0.0,
            weight_bit: 0.0,
            mux2: 0.0,
            adder: 0.0,
            fanout: 0.0,
            accum_bits: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.table_bit, self.weight_bit, self.mux2, self.adder, self.fanout];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "cost weights must be finite and non-negative".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub table_bits: u64,
    pub weight_bits: u64,
    pub mux2_count: u64,
    /// Accumulator lanes; the precompute adders run in software and are
    /// left out.
    pub adder_count: u64,
    pub table_broadcast_fanout: u64,
    pub weight_broadcast_fanout: u64,
    pub table_bits_per_op: f64,
    pub weight_bits_per_op: f64,
    pub io_bits_per_cycle: u64,
    pub proxy_cost: f64,
}

impl CostReport {
    pub fn proxy_cost_per_op(&self, cfg: &LutArrayConfig) -> f64 {
        self.proxy_cost / cfg.ops() as f64
    }
}

pub fn table_storage_bits(cfg: &LutArrayConfig) -> u64 {
    assert!(cfg.k >= 1, "group length must be positive");
    cfg.m * (1u64 << (cfg.k - 1)) * cfg.lut_bit
}

pub fn weight_buffer_bits(cfg: &LutArrayConfig) -> u64 {
    cfg.k * cfg.n * cfg.w_bit
}

pub fn cost_model(cfg: &LutArrayConfig, w: &CostWeights) -> CostReport {
    let table_bits = table_storage_bits(cfg);
    let weight_bits = weight_buffer_bits(cfg);
    let mux2_count = cfg.m * cfg.n * ((1u64 << (cfg.k - 1)) - 1) * cfg.lut_bit;
    let adder_count = cfg.m * cfg.n;
    let ops = cfg.ops() as f64;
    let fanout_bits = table_bits * cfg.n + weight_bits * cfg.m;
    let proxy_cost = w.table_bit * table_bits as f64
        + w.weight_bit * weight_bits as f64
        + w.mux2 * mux2_count as f64
        + w.adder * (adder_count * w.accum_bits) as f64
        + w.fanout * fanout_bits as f64;
    CostReport {
        table_bits,
        weight_bits,
        mux2_count,
        adder_count,
        table_broadcast_fanout: cfg.n,
        weight_broadcast_fanout: cfg.m,
        table_bits_per_op: table_bits as f64 / ops,
        weight_bits_per_op: weight_bits as f64 / ops,
        io_bits_per_cycle: table_bits + weight_bits,
        proxy_cost,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub config: LutArrayConfig,
    pub cost: CostReport,
}

/// Every `(M, N, K)` with power-of-two `M`, `N`, `K` in `k_range` and
/// `M * N * K = budget`, ranked by proxy cost, then larger `N`, then
/// smaller `K`.
pub fn enumerate_designs(
    budget: u64,
    k_range: std::ops::RangeInclusive<u64>,
    lut_bit: u64,
    w_bit: u64,
    a_bit: u64,
    weights: &CostWeights,
) -> Result<Vec<Design>> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    if *k_range.start() == 0 {
        return Err(Error::InvalidArgument("group length must be positive".into()));
    }
    weights.validate()?;
    let mut out = Vec::new();
    for k in k_range {
        if k > 32 || !budget.is_multiple_of(k) {
            continue;
        }
        let mn = budget / k;
        let mut m = 1u64;
        while m <= mn {
            if mn.is_multiple_of(m) && (mn / m).is_power_of_two() {
                let config = LutArrayConfig {
                    m,
                    n: mn / m,
                    k,
                    lut_bit,
                    w_bit,
                    a_bit,
                };
                out.push(Design {
                    config,
                    cost: cost_model(&config, weights),
                });
            }
            m *= 2;
        }
    }
    out.sort_by(|a, b| {
        a.cost
            .proxy_cost
            .total_cmp(&b.cost.proxy_cost)
            .then(b.config.n.cmp(&a.config.n))
            .then(a.config.k.cmp(&b.config.k))
            .then(a.config.m.cmp(&b.config.m))
    });
    Ok(out)
}

/// Designs not dominated in `(table_bits_per_op, weight_bits_per_op)`, both
/// minimised.
pub fn pareto_frontier(designs: &[Design]) -> Vec<Design> {
    let key = |d: &Design| (d.cost.table_bits_per_op, d.cost.weight_bits_per_op);
    designs
        .iter()
        .filter(|d| {
            let (t, w) = key(d);
            !designs.iter().any(|o| {
                let (ot, ow) = key(o);
                ot <= t && ow <= w && (ot < t || ow < w)
            })
        })
        .copied()
        .collect()
}

pub const CSV_HEADER: &str =
    "m,n,k,lut_bit,w_bit,table_bits,weight_bits,mux2,adders,table_bits_per_op,weight_bits_per_op,proxy_cost";

pub fn to_csv(designs: &[Design]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for d in designs {
        let (c, r) = (&d.config, &d.cost);
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.m,
            c.n,
            c.k,
            c.lut_bit,
            c.w_bit,
            r.table_bits,
            r.weight_bits,
            r.mux2_count,
            r.adder_count,
            r.table_bits_per_op,
            r.weight_bits_per_op,
            r.proxy_cost
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: u64, n: u64, k: u64, lut_bit: u64, w_bit: u64) -> LutArrayConfig {
        LutArrayConfig {
            m,
            n,
            k,
            lut_bit,
            w_bit,
            a_bit: 16,
        }
    }

    #[test]
    fn storage_formulas() {
        assert_eq!(table_storage_bits(&cfg(2, 1, 4, 8, 1)), 128);
        assert_eq!(table_storage_bits(&cfg(1, 1, 2, 16, 1)), 32);
        assert_eq!(table_storage_bits(&cfg(8, 1, 4, 8, 1)), 512);
        assert_eq!(weight_buffer_bits(&cfg(1, 64, 4, 8, 1)), 256);
        assert_eq!(weight_buffer_bits(&cfg(1, 4, 4, 8, 8)), 128);
        assert_eq!(weight_buffer_bits(&cfg(1, 4, 16, 8, 8)), 512);
    }

    #[test]
    fn per_op_metrics() {
        let c = cfg(2, 64, 4, 8, 1);
        let r = cost_model(&c, &CostWeights::default());
        assert_eq!(r.table_bits_per_op, 0.25);
        assert_eq!(r.weight_bits_per_op, 0.5);
        assert_eq!(r.mux2_count, 2 * 64 * 7 * 8);
        assert_eq!((r.table_broadcast_fanout, r.weight_broadcast_fanout), (64, 2));
        assert_eq!(cost_model(&c, &CostWeights::zero()).proxy_cost, 0.0);
    }

    #[test]
    fn enumeration_contents() {
        let d = enumerate_designs(512, 4..=4, 8, 1, 16, &CostWeights::default()).unwrap();
        let shapes: Vec<_> = d.iter().map(|d| (d.config.m, d.config.n, d.config.k)).collect();
        for s in [(2, 64, 4), (8, 16, 4), (16, 8, 4), (64, 2, 4)] {
            assert!(shapes.contains(&s), "missing {s:?}");
        }
        assert_eq!(shapes.len(), 8);
        assert!(d.windows(2).all(|w| w[0].cost.proxy_cost <= w[1].cost.proxy_cost));
        let none = enumerate_designs(3, 2..=2, 8, 1, 16, &CostWeights::default()).unwrap();
        assert!(none.is_empty());
        assert!(enumerate_designs(0, 2..=2, 8, 1, 16, &CostWeights::default()).is_err());
    }

    #[test]
    fn elongated_tile_on_frontier() {
        let d = enumerate_designs(512, 4..=4, 8, 1, 16, &CostWeights::default()).unwrap();
        let front = pareto_frontier(&d);
        assert!(front
            .iter()
            .any(|d| (d.config.m, d.config.n, d.config.k) == (2, 64, 4)));
        let t = |m, n| cost_model(&cfg(m, n, 4, 8, 1), &CostWeights::default()).table_bits_per_op;
        assert!(t(2, 64) < t(16, 8));
    }

    #[test]
    fn k4_beats_neighbours_at_elongated_n() {
        let w = CostWeights::default();
        let per_op = |m, k| {
            let c = cfg(m, 64, k, 8, 1);
            cost_model(&c, &w).proxy_cost_per_op(&c)
        };
        let (k2, k4, k8) = (per_op(4, 2), per_op(2, 4), per_op(1, 8));
        assert!(k4 <= k2 && k4 <= k8, "{k2} {k4} {k8}");
    }

    #[test]
    fn csv_layout() {
        let d = enumerate_designs(512, 4..=4, 8, 1, 16, &CostWeights::default()).unwrap();
        let csv = to_csv(&d);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), d.len() + 1);
        assert!(lines.iter().all(|l| l.split(',').count() == 12));
    }
}
