use std::path::Path;

use anyhow::{bail, Context, Result};
use lutcore::lut::ActivationTile;
use lutcore::perfsim::HwConfig;
use lutcore::quantizer::{quantize_weights, QuantMode, QuantizedWeights};
use lutcore::{Dtype, Matrix};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use sha2::{Digest, Sha256};

/// All randomness comes from PCG-64 (XSL-RR 128/64) seeded through
/// `SeedableRng::seed_from_u64`.
pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Activation values: uniform integers over the full range for integer
/// formats, uniform reals in `[-4, 4)` rounded to the format otherwise.
pub fn random_activations(rng: &mut Pcg64, rows: usize, cols: usize, dtype: Dtype) -> Result<ActivationTile> {
    let m = Matrix::from_fn(rows, cols, |_, _| match dtype {
        Dtype::Int8 => rng.random_range(-128..=127) as f64,
        Dtype::Int16 => rng.random_range(-32768..=32767) as f64,
        _ => rng.random_range(-4.0..4.0),
    });
    Ok(ActivationTile::rounded(&m, dtype)?)
}

/// Real weights uniform in `[-1, 1)`, quantized per row.
pub fn random_weights(
    rng: &mut Pcg64,
    rows: usize,
    cols: usize,
    w_bits: u32,
    mode: QuantMode,
) -> Result<QuantizedWeights> {
    let w = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    Ok(quantize_weights(&w, w_bits, mode)?)
}

/// Operands for a seeded GEMM problem; activations are drawn first.
pub fn gemm_operands(
    (m, n, k): (usize, usize, usize),
    a_dtype: Dtype,
    w_bits: u32,
    mode: QuantMode,
    seed: u64,
) -> Result<(ActivationTile, QuantizedWeights)> {
    let mut r = rng(seed);
    let a = random_activations(&mut r, m, k, a_dtype)?;
    let w = random_weights(&mut r, n, k, w_bits, mode)?;
    Ok((a, w))
}

/// SHA-256 over the little-endian bit patterns of the values, row-major.
pub fn checksum(m: &Matrix) -> String {
    let mut h = Sha256::new();
    for v in m.as_slice() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// A path to a config file, or the name of a bundled one.
pub fn load_hw(spec: &str) -> Result<HwConfig> {
    let p = Path::new(spec);
    if p.exists() {
        return HwConfig::from_json(&read_to_string(p)?).with_context(|| format!("parsing {spec}"));
    }
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    match HwConfig::bundled(spec).or_else(|| HwConfig::bundled(stem)) {
        Some(hw) => Ok(hw),
        None => bail!(
            "no hardware config file `{spec}` and no bundled config of that name (bundled: {})",
            HwConfig::bundled_names().join(", ")
        ),
    }
}

/// Size the global worker pool from `LUTCORE_THREADS` (unset or 0: one per core).
pub fn init_threads() -> Result<()> {
    let n = match std::env::var("LUTCORE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("LUTCORE_THREADS=`{v}` is not a count"))?,
        Err(_) => 0,
    };
    if n > 0 {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
