//! Graded η grids on `[0, L]`.
//!
//! Cells start at `first_cell` next to the wall (resolving the grazing
//! boundary layer), grow geometrically by `growth`, and are capped at
//! `max_cell`. Breakpoints (the force knees) are always grid levels, and the
//! last cell is balanced so that no sliver cell appears at `L`.

use crate::error::{MilneError, Result};

/// Builds the level list `0 = η_0 < η_1 < … < η_N = length`.
pub fn build_eta_grid(
    length: f64,
    first_cell: f64,
    growth: f64,
    max_cell: f64,
    breakpoints: &[f64],
) -> Result<Vec<f64>> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(MilneError::Parameter(format!("slab length must be positive, got {length}")));
    }
    if !(first_cell > 0.0 && max_cell >= first_cell && growth >= 1.0) {
        return Err(MilneError::Parameter(format!(
            "invalid eta grading: first cell {first_cell}, growth {growth}, max cell {max_cell}"
        )));
    }
    let mut stops: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > 0.0 && b < length).collect();
    stops.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    stops.push(length);
    let mut levels = vec![0.0];
    let mut eta = 0.0;
    let mut h = first_cell;
    for &stop in &stops {
        while eta < stop {
            let remaining = stop - eta;
            let step = if remaining <= h * (1.0 + 1e-9) {
                remaining
            } else if remaining < 2.0 * h {
                0.5 * remaining
            } else {
                h
            };
            eta = if step == remaining { stop } else { eta + step };
            levels.push(eta);
            h = (h * growth).min(max_cell);
        }
    }
    Ok(levels)
}

/// Splits every cell into `parts` equal cells.
pub fn subdivide(levels: &[f64], parts: usize) -> Vec<f64> {
    if parts <= 1 {
        return levels.to_vec();
    }
    let mut out = Vec::with_capacity((levels.len() - 1) * parts + 1);
    out.push(levels[0]);
    for w in levels.windows(2) {
        for p in 1..=parts {
            out.push(if p == parts { w[1] } else { w[0] + (w[1] - w[0]) * p as f64 / parts as f64 });
        }
    }
    out
}
