//! Machine-readable campaign outputs: CSV curves and sweep tables plus a
//! small reproducibility manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::numerics::fmt_f64;

use super::{MsdCurve, SweepTable};

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Writes `msd_curves.csv` with columns `filter,k,msd_db`.
pub fn write_msd_curves(path: &Path, curves: &[MsdCurve]) -> Result<()> {
    let mut out = String::from("filter,k,msd_db\n");
    for curve in curves {
        for (k, v) in curve.msd_db.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", curve.filter, k + 1, fmt_f64(*v)));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `sweep.csv` with columns
/// `alpha2,beta2,lambda,steady_msd_db,failed,fallback_rate`.
pub fn write_sweep(path: &Path, table: &SweepTable) -> Result<()> {
    let mut out = String::from("alpha2,beta2,lambda,steady_msd_db,failed,fallback_rate\n");
    for cell in &table.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.alpha2,
            cell.beta2,
            cell.lambda,
            fmt_f64(cell.steady_msd_db),
            cell.failed,
            fmt_f64(cell.fallback_rate),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `manifest.toml` recording the config hash, master seed, and the
/// producing crate version.
pub fn write_manifest(path: &Path, config_toml: &str, master_seed: u64) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "config_hash = \"{:016x}\"", fnv1a64(config_toml.as_bytes()))?;
    writeln!(f, "master_seed = {master_seed}")?;
    writeln!(f, "crate = \"{}\"", env!("CARGO_PKG_NAME"))?;
    writeln!(f, "version = \"{}\"", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
