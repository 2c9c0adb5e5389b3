//! Report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::Format;
use crate::runner::RunReport;

pub const SPECTRUM_HEADER: &str = "# met spectrum v1\nk,n,sample,value\n";
pub const FILTRATION_HEADER: &str = "# met filtration v1\nlevel,n,cauchy_dist,equiv_residual\n";

/// Shortest round-tripping decimal, switching to exponent form for very large or small
/// magnitudes.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// One row per (order, grid length, sample) of `(1/n) log D_k`.
pub fn spectrum_csv(report: &RunReport) -> String {
    let mut out = String::from(SPECTRUM_HEADER);
    let spec = &report.spectrum;
    for (k, per_grid) in spec.values.iter().enumerate() {
        for (n, samples) in spec.n_grid.iter().zip(per_grid) {
            for (s, v) in samples.iter().enumerate() {
                writeln!(out, "{},{},{},{}", k + 1, n, s, fmt_float(*v)).unwrap();
            }
        }
    }
    out
}

/// One row per (level, grid length). The Cauchy distance compares with the next grid length
/// and is empty on the last row.
pub fn filtration_csv(report: &RunReport) -> String {
    let mut out = String::from(FILTRATION_HEADER);
    if let Some(f) = &report.filtration {
        for l in &f.levels {
            for (i, n) in f.n_grid.iter().enumerate() {
                let c = l.cauchy.get(i).map(|&c| fmt_float(c)).unwrap_or_default();
                let e = l
                    .equivariance
                    .get(i)
                    .map(|&e| fmt_float(e))
                    .unwrap_or_default();
                writeln!(out, "{},{},{},{}", l.level, n, c, e).unwrap();
            }
        }
    }
    out
}

/// Writes `report.json`, `spectrum.csv` and `filtration.csv` as selected by `formats`.
pub fn write_outputs(report: &RunReport, dir: &Path, formats: &[Format]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    if formats.contains(&Format::Json) {
        fs::write(dir.join("report.json"), report.to_json())?;
    }
    if formats.contains(&Format::Csv) {
        fs::write(dir.join("spectrum.csv"), spectrum_csv(report))?;
        fs::write(dir.join("filtration.csv"), filtration_csv(report))?;
    }
    Ok(())
}
