//! Lookup-table mixed-precision GEMM.
//!
//! Activations are cut into groups of `K` elements. For every group a table
//! of all `±1` signed sums is precomputed once, and every output column then
//! replaces a length-`K` dot product with a table read per weight bit plane.
//!
//! Index convention: bit `j` of a lookup index addresses activation element
//! `j` of the group; a set bit means `+A_j`, a clear bit `-A_j`. The
//! symmetric form stores only indices whose top bit is clear and recovers
//! the rest through `LUT[i] = -LUT[!i]`.
//!
//! Accumulation is exact. Activations of every supported format live on a
//! power-of-two grid (`Dtype::fixed_point_unit`), so table entries and dot
//! products are accumulated as integers on that grid and converted to `f64`
//! once, at the end. The dequantization reference uses the same final
//! conversion, which makes the two paths comparable bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clamp_round_int, Dtype};
use crate::quantizer::{BitPlanes, QuantizedWeights};
use crate::tensor::Matrix;

pub const DEFAULT_GROUP: usize = 4;
pub const MIN_GROUP: usize = 2;
pub const MAX_GROUP: usize = 8;

/// Largest magnitude of a signed 8-bit table code.
const TABLE_CODE_MAX: f64 = 127.0;

/// Activations already rounded to their declared format.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTile {
    values: Matrix,
    dtype: Dtype,
}

impl ActivationTile {
    /// Wrap values that are exactly representable in `dtype`.
    pub fn new(values: Matrix, dtype: Dtype) -> Result<Self> {
        if !dtype.is_activation() {
            return Err(Error::InvalidArgument(format!(
                "{dtype} is not an activation format"
            )));
        }
        if let Some(v) = values.as_slice().iter().find(|&&v| !dtype.represents(v)) {
            return Err(Error::InvalidArgument(format!(
                "activation {v} is not representable in {dtype}"
            )));
        }
        Ok(ActivationTile { values, dtype })
    }

    /// Round arbitrary reals into `dtype` first.
    pub fn rounded(values: &Matrix, dtype: Dtype) -> Result<Self> {
        ActivationTile::new(values.map(|v| dtype.cast(v)), dtype)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    fn unit(&self) -> f64 {
        self.dtype
            .fixed_point_unit()
            .expect("activation formats have a fixed-point grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmConfig {
    pub group: usize,
    pub quantize_tables: bool,
}

impl Default for GemmConfig {
    fn default() -> Self {
        GemmConfig {
            group: DEFAULT_GROUP,
            quantize_tables: false,
        }
    }
}

impl GemmConfig {
    pub fn with_group(group: usize) -> Self {
        GemmConfig {
            group,
            ..GemmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (MIN_GROUP..=MAX_GROUP).contains(&self.group) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "group length {} outside {MIN_GROUP}..={MAX_GROUP}",
                self.group
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableForm {
    /// All `2^K` sign patterns.
    Full,
    /// The `2^(K-1)` patterns with the top select bit clear.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableQuant {
    pub scale: f64,
    pub codes: Vec<i8>,
}

/// Precomputed signed sums for one activation group.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    group: usize,
    form: TableForm,
    entries: Vec<f64>,
    group_sum: f64,
    quant: Option<TableQuant>,
}

fn signed_sum(act: &[f64], idx: usize) -> f64 {
    act.iter()
        .enumerate()
        .fold(0.0, |acc, (j, &a)| if (idx >> j) & 1 == 1 { acc + a } else { acc - a })
}

/// Table with all `2^K` entries.
pub fn precompute_table_full(act_group: &[f64]) -> LookupTable {
    let k = act_group.len();
    LookupTable {
        group: k,
        form: TableForm::Full,
        entries: (0..1usize << k).map(|i| signed_sum(act_group, i)).collect(),
        group_sum: act_group.iter().sum(),
        quant: None,
    }
}

/// Half-size table: entries for indices with bit `K-1` clear, i.e. the last
/// activation of the group always enters negated.
pub fn precompute_table_symmetric(act_group: &[f64]) -> LookupTable {
    let k = act_group.len();
    assert!(k >= 1, "empty activation group");
    LookupTable {
        group: k,
        form: TableForm::Symmetric,
        entries: (0..1usize << (k - 1))
            .map(|i| signed_sum(act_group, i))
            .collect(),
        group_sum: act_group.iter().sum(),
        quant: None,
    }
}

impl LookupTable {
    pub fn group(&self) -> usize {
        self.group
    }

    pub fn form(&self) -> TableForm {
        self.form
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unquantized stored entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Sum of the group, i.e. the all-ones entry.
    pub fn group_sum(&self) -> f64 {
        self.group_sum
    }

    pub fn quant(&self) -> Option<&TableQuant> {
        self.quant.as_ref()
    }

    pub fn is_quantized(&self) -> bool {
        self.quant.is_some()
    }

    /// Storage in bits for the given entry width.
    pub fn storage_bits(&self, entry_bits: u32) -> u64 {
        self.len() as u64 * entry_bits as u64
    }

    /// Stored value at a storage position, dequantized when quantized.
    pub fn stored(&self, pos: usize) -> f64 {
        match &self.quant {
            Some(q) => q.scale * q.codes[pos] as f64,
            None => self.entries[pos],
        }
    }

    /// Read the entry for a raw `K`-bit index, reconstructing entries with
    /// the top bit set from their complement.
    pub fn lookup(&self, idx: usize) -> Result<f64> {
        let full = 1usize << self.group;
        if idx >= full {
            return Err(Error::IndexOutOfRange { index: idx, len: full });
        }
        Ok(match self.form {
            TableForm::Full => self.stored(idx),
            TableForm::Symmetric => {
                let mask = (full >> 1) - 1;
                if idx >> (self.group - 1) == 0 {
                    self.stored(idx & mask)
                } else {
                    // subtraction from +0 keeps zero entries positive, unlike negation
                    0.0 - self.stored(!idx & mask)
                }
            }
        })
    }

    /// Read with a pre-complemented select code (see [`select_code`]): the
    /// low bits address storage directly and the top bit only negates.
    pub fn lookup_select(&self, sel: u8) -> f64 {
        debug_assert_eq!(self.form, TableForm::Symmetric);
        let half = 1u8 << (self.group - 1);
        let v = self.stored((sel & (half - 1)) as usize);
        if sel & half != 0 {
            0.0 - v
        } else {
            v
        }
    }

    /// Per-table int8 quantization with `scale = max|entry| / 127`.
    pub fn quantize(&self) -> LookupTable {
        let amax = self.entries.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let (scale, codes) = if amax == 0.0 {
            (1.0, vec![0i8; self.entries.len()])
        } else {
            // e * 127 / amax rounds once, unlike e / (amax / 127)
            let codes = self
                .entries
                .iter()
                .map(|&e| clamp_round_int(e * TABLE_CODE_MAX / amax, 8, true) as i8)
                .collect();
            (amax / TABLE_CODE_MAX, codes)
        };
        LookupTable {
            quant: Some(TableQuant { scale, codes }),
            ..self.clone()
        }
    }
}

/// Raw lookup index for group `g` of weight row `n` in bit plane `b`.
fn raw_index(planes: &BitPlanes, b: usize, n: usize, g: usize, group: usize) -> usize {
    (0..group)
        .map(|j| g * group + j)
        .take_while(|&k| k < planes.cols())
        .enumerate()
        .fold(0, |idx, (j, k)| idx | ((planes.bit(b, n, k) as usize) << j))
}

/// Fold the complement of a raw index into a select code: when the top bit
/// is set the low bits are inverted ahead of time, so lookup never inverts.
pub fn select_code(raw: usize, group: usize) -> u8 {
    let half = 1usize << (group - 1);
    let mask = half - 1;
    if raw & half != 0 {
        (half | (!raw & mask)) as u8
    } else {
        raw as u8
    }
}

/// Reinterpreted weights prepared for bit-serial lookup with a fixed group
/// length. Select codes are stored `[n][group][plane]`.
#[derive(Debug, Clone)]
pub struct LutWeights {
    planes: BitPlanes,
    group: usize,
    groups: usize,
    scale: Vec<f64>,
    zero: Vec<f64>,
    twice_zero: Option<Vec<i64>>,
    selects: Vec<u8>,
}

impl LutWeights {
    pub fn new(qw: &QuantizedWeights, group: usize) -> Result<Self> {
        GemmConfig::with_group(group).validate()?;
        let planes = qw.pack_bitplanes()?;
        let groups = qw.cols().div_ceil(group);
        let w_bits = qw.w_bits() as usize;
        let mut selects = Vec::with_capacity(qw.rows() * groups * w_bits);
        for n in 0..qw.rows() {
            for g in 0..groups {
                for b in 0..w_bits {
                    selects.push(select_code(raw_index(&planes, b, n, g, group), group));
                }
            }
        }
        let p = qw.params();
        let twice_zero = (0..p.channels()).map(|c| p.twice_zero(c)).collect();
        Ok(LutWeights {
            planes,
            group,
            groups,
            scale: p.scale.clone(),
            zero: p.zero.clone(),
            twice_zero,
            selects,
        })
    }

    pub fn n_out(&self) -> usize {
        self.planes.rows()
    }

    pub fn k_dim(&self) -> usize {
        self.planes.cols()
    }

    pub fn w_bits(&self) -> u32 {
        self.planes.w_bits()
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn bit_planes(&self) -> &BitPlanes {
        &self.planes
    }

    /// Reinterpreted per-channel scales.
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn zero(&self) -> &[f64] {
        &self.zero
    }

    fn selects(&self, n: usize, g: usize) -> &[u8] {
        let w = self.w_bits() as usize;
        let start = (n * self.groups + g) * w;
        &self.selects[start..start + w]
    }
}

/// One symmetric table per `(row, group)` of an activation tile.
#[derive(Debug, Clone)]
pub struct TableTensor {
    rows: usize,
    groups: usize,
    group: usize,
    dtype: Dtype,
    tables: Vec<LookupTable>,
}

impl TableTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn table(&self, m: usize, g: usize) -> &LookupTable {
        &self.tables[m * self.groups + g]
    }

    pub fn tables(&self) -> &[LookupTable] {
        &self.tables
    }

    pub fn is_quantized(&self) -> bool {
        self.tables.first().is_some_and(LookupTable::is_quantized)
    }

    /// Analytic worst case of `|quantized - exact|` for any output in row
    /// `m`: `max|s'| * (2^W - 1) * sum_g scale[m, g] / 2`.
    pub fn quant_error_bound(&self, m: usize, weights: &LutWeights) -> f64 {
        let max_scale = weights.scale.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        let plane_weight = ((1u64 << weights.w_bits()) - 1) as f64;
        let half_scales: f64 = (0..self.groups)
            .map(|g| self.table(m, g).quant().map_or(0.0, |q| q.scale / 2.0))
            .sum();
        max_scale * plane_weight * half_scales
    }
}

/// Build every table of an activation tile once. A ragged tail is padded
/// with zero activations.
pub fn precompute_operator(act: &ActivationTile, cfg: &GemmConfig) -> Result<TableTensor> {
    cfg.validate()?;
    let k = cfg.group;
    let groups = act.cols().div_ceil(k);
    let mut tables = Vec::with_capacity(act.rows() * groups);
    let mut buf = vec![0.0; k];
    for m in 0..act.rows() {
        let row = act.values().row(m);
        for g in 0..groups {
            buf.fill(0.0);
            let start = g * k;
            let end = (start + k).min(row.len());
            buf[..end - start].copy_from_slice(&row[start..end]);
            let t = precompute_table_symmetric(&buf);
            tables.push(if cfg.quantize_tables { t.quantize() } else { t });
        }
    }
    Ok(TableTensor {
        rows: act.rows(),
        groups,
        group: k,
        dtype: act.dtype(),
        tables,
    })
}

/// Counters collected while running the bit-serial engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LutStats {
    pub tables: u64,
    pub lookups: u64,
}

fn check_shapes(act: &ActivationTile, k_dim: usize) -> Result<()> {
    if act.cols() != k_dim {
        return Err(Error::ShapeMismatch(format!(
            "activations have {} columns, weights expect {k_dim}",
            act.cols()
        )));
    }
    Ok(())
}

/// `2 * dot` for the exact path, `dot` for the float fallback.
enum RowAcc {
    Exact(i128),
    Float(f64),
}

/// Bit-serial LUT mpGEMM: `O = A * W^T` with reinterpreted, packed weights.
pub fn lut_mpgemm(act: &ActivationTile, w: &LutWeights, cfg: &GemmConfig) -> Result<Matrix> {
    lut_mpgemm_with_stats(act, w, cfg).map(|(o, _)| o)
}

pub fn lut_mpgemm_with_stats(
    act: &ActivationTile,
    w: &LutWeights,
    cfg: &GemmConfig,
) -> Result<(Matrix, LutStats)> {
    check_shapes(act, w.k_dim())?;
    if cfg.group != w.group {
        return Err(Error::InvalidArgument(format!(
            "weights packed for group {} but config uses {}",
            w.group, cfg.group
        )));
    }
    let tables = precompute_operator(act, cfg)?;
    let (out, lookups) = lut_mpgemm_tables(&tables, w)?;
    Ok((
        out,
        LutStats {
            tables: tables.tables.len() as u64,
            lookups,
        },
    ))
}

/// The LUT-mpGEMM operator proper, consuming precomputed tables.
pub fn lut_mpgemm_tables(tables: &TableTensor, w: &LutWeights) -> Result<(Matrix, u64)> {
    if tables.groups != w.groups || tables.group != w.group {
        return Err(Error::ShapeMismatch(format!(
            "{} tables of group {} vs weights with {} groups of {}",
            tables.groups, tables.group, w.groups, w.group
        )));
    }
    let unit = tables
        .dtype
        .fixed_point_unit()
        .expect("activation formats have a fixed-point grid");
    let inv_unit = unit.recip();
    let quantized = tables.is_quantized();
    let (rows, n_out, groups) = (tables.rows, w.n_out(), w.groups);
    let mut out = Matrix::zeros(rows, n_out);
    let counts: Vec<u64> = (0..rows)
        .into_par_iter()
        .map(|m| {
            let row_tables = &tables.tables[m * groups..(m + 1) * groups];
            let sum_fixed: i128 = row_tables
                .iter()
                .map(|t| (t.group_sum * inv_unit) as i128)
                .sum();
            let sum_real: f64 = row_tables.iter().map(|t| t.group_sum).sum();
            // stored entries converted to the fixed grid once per table
            let fixed: Vec<Vec<i64>> = if quantized {
                Vec::new()
            } else {
                row_tables
                    .iter()
                    .map(|t| t.entries.iter().map(|&e| (e * inv_unit) as i64).collect())
                    .collect()
            };
            let mut count = 0u64;
            let mut row_out = vec![0.0; n_out];
            for (n, o) in row_out.iter_mut().enumerate() {
                let acc = if quantized {
                    let mut acc = 0.0f64;
                    for (g, t) in row_tables.iter().enumerate() {
                        for (b, &sel) in w.selects(n, g).iter().enumerate() {
                            acc += t.lookup_select(sel) * (1u32 << b) as f64;
                            count += 1;
                        }
                    }
                    RowAcc::Float(acc)
                } else {
                    let half = 1u8 << (w.group - 1);
                    let mask = half - 1;
                    let mut acc: i128 = 0;
                    for (g, entries) in fixed.iter().enumerate() {
                        for (b, &sel) in w.selects(n, g).iter().enumerate() {
                            let v = entries[(sel & mask) as usize] as i128;
                            let v = if sel & half != 0 { -v } else { v };
                            acc += v << b;
                            count += 1;
                        }
                    }
                    RowAcc::Exact(acc)
                };
                *o = match (acc, &w.twice_zero) {
                    (RowAcc::Exact(dot), Some(tz)) => {
                        finish_exact(2 * dot - tz[n] as i128 * sum_fixed, unit, w.scale[n])
                    }
                    (RowAcc::Exact(dot), None) => {
                        w.scale[n] * (dot as f64 * unit - w.zero[n] * sum_real)
                    }
                    (RowAcc::Float(dot), _) => w.scale[n] * (dot - w.zero[n] * sum_real),
                };
            }
            (m, row_out, count)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(m, row_out, count)| {
            out.row_mut(m).copy_from_slice(&row_out);
            count
        })
        .collect();
    Ok((out, counts.iter().sum()))
}

/// `scale * (twice / 2)` on the activation grid, computed as
/// `twice * unit * (scale / 2)`; every step but the last is exact.
fn finish_exact(twice: i128, unit: f64, scale: f64) -> f64 {
    (twice as f64) * unit * (scale * 0.5)
}

/// Dequantization-based reference: expand every weight to
/// `scale * (code - zero)` and take plain dot products.
pub fn reference_mpgemm(
    act: &ActivationTile,
    qw: &QuantizedWeights,
    cfg: &GemmConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    check_shapes(act, qw.cols())?;
    let unit = act.unit();
    let inv_unit = unit.recip();
    let p = qw.params();
    let (rows, n_out, k_dim) = (act.rows(), qw.rows(), qw.cols());
    let fixed_act: Vec<i64> = act
        .values()
        .as_slice()
        .iter()
        .map(|&v| (v * inv_unit) as i64)
        .collect();
    let mut out = Matrix::zeros(rows, n_out);
    let rows_out: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|m| {
            let a = &fixed_act[m * k_dim..(m + 1) * k_dim];
            let a_real = act.values().row(m);
            (0..n_out)
                .map(|n| {
                    let codes = qw.row_codes(n);
                    match p.twice_zero(n) {
                        Some(tz) => {
                            // exact dequantized weight is (scale / 2) * (2q - 2z)
                            let dot: i128 = a
                                .iter()
                                .zip(codes)
                                .map(|(&x, &q)| x as i128 * (2 * q as i64 - tz) as i128)
                                .sum();
                            finish_exact(dot, unit, p.scale[n])
                        }
                        None => a_real
                            .iter()
                            .zip(codes)
                            .map(|(&x, &q)| x * (p.scale[n] * (q as f64 - p.zero[n])))
                            .sum(),
                    }
                })
                .collect()
        })
        .collect();
    for (m, r) in rows_out.into_iter().enumerate() {
        out.row_mut(m).copy_from_slice(&r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{quantize_weights, QuantMode, QuantParams};

    const A: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

    fn int8_row(values: &[f64]) -> ActivationTile {
        ActivationTile::new(
            Matrix::from_vec(1, values.len(), values.to_vec()).unwrap(),
            Dtype::Int8,
        )
        .unwrap()
    }

    #[test]
    fn full_table_examples() {
        let t = precompute_table_full(&A);
        assert_eq!(t.len(), 16);
        assert_eq!(t.lookup(0b1111).unwrap(), 10.0);
        // bit string W3W2W1W0 = 0100 with A bound to W3 is element order
        // [0, 1, 0, 0], i.e. index 0b0010 under the bit-j-is-element-j rule
        assert_eq!(t.lookup(0b0010).unwrap(), -6.0);
        assert_eq!(t.lookup(0b0100).unwrap(), -4.0);
        let z = precompute_table_full(&[0.0; 4]);
        assert!(z.entries().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn symmetric_table_examples() {
        let t = precompute_table_symmetric(&A);
        assert_eq!(t.entries(), &[-10.0, -8.0, -6.0, -4.0, -4.0, -2.0, 0.0, 2.0]);
        assert_eq!(t.lookup(0b1011).unwrap(), 4.0);
        assert_eq!(t.lookup(0b0111).unwrap(), 2.0);
        assert_eq!(t.lookup(0b1000).unwrap(), -2.0);
        assert_eq!(t.lookup(0b1111).unwrap(), 10.0);
        assert_eq!(t.group_sum(), 10.0);
        assert!(matches!(
            t.lookup(16),
            Err(Error::IndexOutOfRange { index: 16, len: 16 })
        ));
    }

    #[test]
    fn select_codes_match_raw_lookup() {
        let t = precompute_table_symmetric(&A);
        for raw in 0..16 {
            assert_eq!(t.lookup_select(select_code(raw, 4)), t.lookup(raw).unwrap());
        }
    }

    #[test]
    fn table_quantization_example() {
        let q = precompute_table_symmetric(&A).quantize();
        let tq = q.quant().unwrap();
        assert_eq!(tq.scale, 10.0 / 127.0);
        assert_eq!(tq.codes, vec![-127, -102, -76, -51, -51, -25, 0, 25]);
        for (pos, &e) in q.entries().iter().enumerate() {
            assert!((q.stored(pos) - e).abs() <= tq.scale / 2.0);
        }
        let z = precompute_table_symmetric(&[0.0; 4]).quantize();
        assert_eq!(z.quant().unwrap().scale, 1.0);
        assert!(z.quant().unwrap().codes.iter().all(|&c| c == 0));
    }

    #[test]
    fn precompute_shapes_and_padding() {
        let act = int8_row(&[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let tt = precompute_operator(&act, &GemmConfig::default()).unwrap();
        assert_eq!((tt.rows(), tt.groups()), (1, 2));
        assert_eq!(tt.table(0, 0).entries(), precompute_table_symmetric(&A).entries());
        assert!(tt.table(0, 1).entries().iter().all(|&e| e == 0.0));
        assert!(tt.tables().iter().all(|t| t.len() == 8));

        let ragged = int8_row(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let tt = precompute_operator(&ragged, &GemmConfig::default()).unwrap();
        assert_eq!(tt.groups(), 2);
        assert_eq!(tt.table(0, 1).group_sum(), 5.0);

        let cfg = GemmConfig {
            quantize_tables: true,
            ..GemmConfig::default()
        };
        let tt = precompute_operator(&act, &cfg).unwrap();
        assert!(tt.tables().iter().all(LookupTable::is_quantized));
    }

    fn two_bit_weights() -> QuantizedWeights {
        // unsigned [2, 1, 3, 0] -> reinterpreted [1, -1, 3, -3], s' = 0.5, z' = 0
        QuantizedWeights::from_codes(
            1,
            4,
            vec![2, 1, 3, 0],
            QuantParams {
                w_bits: 2,
                scale: vec![1.0],
                zero: vec![1.5],
            },
        )
        .unwrap()
    }

    #[test]
    fn bit_serial_trace() {
        let act = int8_row(&A);
        let qw = two_bit_weights();
        let r = qw.reinterpret_symmetric().unwrap();
        let w = LutWeights::new(&r, 4).unwrap();
        let cfg = GemmConfig::default();
        let (o, stats) = lut_mpgemm_with_stats(&act, &w, &cfg).unwrap();
        assert_eq!(o.as_slice(), &[-2.0]);
        assert_eq!(stats.lookups, 2);
        assert_eq!(reference_mpgemm(&act, &qw, &cfg).unwrap().as_slice(), &[-2.0]);
        assert_eq!(reference_mpgemm(&act, &r, &cfg).unwrap().as_slice(), &[-2.0]);
    }

    #[test]
    fn all_plus_weights_give_scaled_sum() {
        let act = int8_row(&[3.0, -7.0, 11.0, 2.0, 5.0, 1.0, -1.0, 9.0]);
        let qw = QuantizedWeights::from_codes(
            1,
            8,
            vec![1; 8],
            QuantParams {
                w_bits: 1,
                scale: vec![0.75],
                zero: vec![0.5],
            },
        )
        .unwrap()
        .reinterpret_symmetric()
        .unwrap();
        assert_eq!(qw.params().zero, vec![0.0]);
        let w = LutWeights::new(&qw, 4).unwrap();
        let o = lut_mpgemm(&act, &w, &GemmConfig::default()).unwrap();
        assert_eq!(o.get(0, 0), 0.375 * 23.0);
    }

    #[test]
    fn reference_edge_cases() {
        let w = Matrix::from_fn(3, 4, |n, k| (n as f64 - 1.0) * 0.3 + k as f64 * 0.1);
        let qw = quantize_weights(&w, 3, QuantMode::Asymmetric).unwrap();
        let cfg = GemmConfig::default();
        let zeros = int8_row(&[0.0; 4]);
        assert!(reference_mpgemm(&zeros, &qw, &cfg)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        let deq = qw.dequantize();
        for k in 0..4 {
            let mut e = [0.0; 4];
            e[k] = 1.0;
            let o = reference_mpgemm(&int8_row(&e), &qw, &cfg).unwrap();
            for n in 0..3 {
                assert_eq!(o.get(0, n), deq.get(n, k));
            }
        }
    }

    #[test]
    fn worked_example_both_paths() {
        let act = int8_row(&A);
        let qw = QuantizedWeights::from_codes(
            1,
            4,
            vec![0, 1, 0, 0],
            QuantParams {
                w_bits: 1,
                scale: vec![2.0],
                zero: vec![0.5],
            },
        )
        .unwrap();
        let cfg = GemmConfig::default();
        assert_eq!(reference_mpgemm(&act, &qw, &cfg).unwrap().get(0, 0), -6.0);
        let r = qw.reinterpret_symmetric().unwrap();
        assert_eq!(r.codes(), &[-1, 1, -1, -1]);
        let w = LutWeights::new(&r, 4).unwrap();
        assert_eq!(lut_mpgemm(&act, &w, &cfg).unwrap().get(0, 0), -6.0);
    }

    #[test]
    fn rejects_bad_operands() {
        let qw = two_bit_weights();
        assert!(matches!(LutWeights::new(&qw, 4), Err(Error::NotReinterpreted)));
        let w = LutWeights::new(&qw.reinterpret_symmetric().unwrap(), 4).unwrap();
        let act = int8_row(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            lut_mpgemm(&act, &w, &GemmConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(reference_mpgemm(&act, &qw, &GemmConfig::default()).is_err());
        assert!(GemmConfig::with_group(9).validate().is_err());
        assert!(ActivationTile::new(Matrix::zeros(1, 1), Dtype::Int4).is_err());
        assert!(ActivationTile::new(
            Matrix::from_vec(1, 1, vec![0.5]).unwrap(),
            Dtype::Int8
        )
        .is_err());
    }
}
