//! Artifact files. Every file name carries the configuration hash; the CSV
//! headers below are part of the public interface and frozen by tests.

use super::checks::Check;
use crate::analysis::{GapReport, GrazingReport};
use crate::error::{MilneError, Result};
use crate::milne_solver::{SlabSolution, TMatrix};
use crate::velocity_grid::VelocityGrid;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Header of the solution CSV.
pub const SOLUTION_HEADER: [&str; 6] = ["eta", "ring", "theta", "v_eta", "v_phi", "g"];
/// Header of the T-matrix CSV.
pub const T_MATRIX_HEADER: [&str; 5] = ["row", "col0", "col1", "col2", "col3"];
/// Header of the gap-comparison CSV.
pub const COMPARE_HEADER: [&str; 6] = ["epsilon", "n", "measured", "predicted", "k_geo", "k_cls"];
/// Header of the grazing CSV.
pub const GRAZING_HEADER: [&str; 3] = ["t", "derivative", "product"];
/// Header of the validation CSV.
pub const VALIDATE_HEADER: [&str; 4] = ["check", "value", "threshold", "pass"];
/// Header of the inflow-data CSV read for `data.kind = file`.
pub const DATA_HEADER: [&str; 3] = ["ring", "angle_index", "h"];

/// `<dir>/<stem>_<hash>.<ext>`.
pub fn artifact_path(dir: &Path, stem: &str, hash: &str, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_{hash}.{ext}"))
}

/// Shortest round-tripping decimal form of a float.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// Pretty JSON to a file, with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// One row per (level, node): `eta, ring, theta, v_eta, v_phi, g`.
pub fn write_solution_csv(path: &Path, grid: &VelocityGrid, sol: &SlabSolution) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SOLUTION_HEADER)?;
    for (k, &eta) in sol.eta.iter().enumerate() {
        for (node, v) in grid.nodes.iter().enumerate() {
            w.write_record([
                num(eta),
                grid.ring_of(node).to_string(),
                num(v.angle()),
                num(v.v_eta),
                num(v.v_phi),
                num(sol.g[(node, k)]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Four rows `row, col0..col3` of `T`.
pub fn write_t_matrix_csv(path: &Path, t: &TMatrix) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(T_MATRIX_HEADER)?;
    for (i, row) in t.entries.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|&x| num(x)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (ε, n).
pub fn write_compare_csv(path: &Path, rows: &[GapReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(COMPARE_HEADER)?;
    for r in rows {
        w.write_record([
            num(r.epsilon),
            num(r.n),
            num(r.measured_gap),
            num(r.predicted_gap),
            num(r.k_terms[0]),
            num(r.k_terms[1]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per probe of the ladder.
pub fn write_grazing_csv(path: &Path, report: &GrazingReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(GRAZING_HEADER)?;
    for ((t, d), p) in report.ladder.iter().zip(&report.derivatives).zip(&report.products) {
        w.write_record([num(*t), num(*d), num(*p)])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per check.
pub fn write_validate_csv(path: &Path, checks: &[Check]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(VALIDATE_HEADER)?;
    for c in checks {
        w.write_record([c.name.clone(), num(c.value), num(c.threshold), c.pass.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads nodal inflow values (`ring, angle_index, h`); nodes not listed are
/// zero, downward nodes are ignored by the solver.
pub fn read_data_csv(path: &Path, grid: &VelocityGrid) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| MilneError::Config(format!("cannot read data file {}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != DATA_HEADER {
        return Err(MilneError::Config(format!(
            "data file {} must have header {}, got {}",
            path.display(),
            DATA_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut values = vec![0.0; grid.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || MilneError::Config(format!("data file {}: malformed row {}", path.display(), line + 2));
        let ring: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let j: usize = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let h: f64 = rec.get(2).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        if ring >= grid.n_rings() || j >= grid.n_theta || !h.is_finite() {
            return Err(bad());
        }
        values[grid.index(ring, j)] = h;
    }
    Ok(values)
}
