//! Two-level right preconditioner for the collided-part solve.
//!
//! The slowly converging components of source iteration are fluid modes
//! `ψ_i(v)` with amplitudes varying slowly in η (the diffusive modes of a
//! thick slab). The coarse space `Z` spans `ψ_i(v)·φ_j(η)` with hat
//! functions `φ_j` on a coarse η mesh; with `E = ZᵀWAZ` and `G = ZᵀWZ`
//! (`W` the quadrature weights times the cell widths) the preconditioner
//!
//! ```text
//! M⁻¹ r = r + Z (E⁻¹ − G⁻¹) Zᵀ W r
//! ```
//!
//! inverts `A` exactly in the Galerkin sense on `Z` and leaves the
//! complement untouched.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Coarse-space correction for an operator on `n_v × n_cells` cell data.
pub struct CoarseSpace {
    /// Coarse vectors, one per column (`n_v·n_cells × m`).
    z: DMatrix<f64>,
    /// `W` on the fine unknowns.
    w: Vec<f64>,
    /// `E⁻¹ − G⁻¹`.
    correction: DMatrix<f64>,
}

/// Coarse η mesh: spacing `min(h_max, max(0.25, η/2))`, closing at `L`.
pub fn coarse_nodes(length: f64) -> Vec<f64> {
    let h_max = (length / 16.0).max(2.0);
    let mut nodes: Vec<f64> = vec![0.0];
    loop {
        let x = *nodes.last().unwrap();
        let next = x + (0.5 * x).clamp(0.25, h_max);
        if next >= length - 0.5 * (0.5 * x).clamp(0.25, h_max) {
            nodes.push(length);
            return nodes;
        }
        nodes.push(next);
    }
}

fn hat(nodes: &[f64], j: usize, x: f64) -> f64 {
    let n = nodes.len();
    if j > 0 && x >= nodes[j - 1] && x <= nodes[j] {
        return (x - nodes[j - 1]) / (nodes[j] - nodes[j - 1]);
    }
    if j + 1 < n && x >= nodes[j] && x <= nodes[j + 1] {
        return (nodes[j + 1] - x) / (nodes[j + 1] - nodes[j]);
    }
    0.0
}

impl CoarseSpace {
    /// Builds the coarse space for modes `modes` (nodal values, each of
    /// length `n_v`) on the cells of `eta`, applying `apply` once per coarse
    /// vector. Returns `None` if the coarse matrix is singular.
    pub fn build<F>(eta: &[f64], vel_weights: &[f64], modes: &[&[f64]], apply: F) -> Option<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let n_v = vel_weights.len();
        let n_cells = eta.len() - 1;
        let n = n_v * n_cells;
        let length = eta[n_cells];
        let nodes = coarse_nodes(length);
        let mids: Vec<f64> = (0..n_cells).map(|c| 0.5 * (eta[c] + eta[c + 1])).collect();
        let mut w = vec![0.0; n];
        for c in 0..n_cells {
            let dx = eta[c + 1] - eta[c];
            for v in 0..n_v {
                w[c * n_v + v] = vel_weights[v] * dx;
            }
        }
        // Hat functions that contain no cell midpoint (a fine mesh coarser
        // than the coarse one) would make `G` singular; they are skipped.
        let supported: Vec<usize> =
            (0..nodes.len()).filter(|&j| mids.iter().any(|&x| hat(&nodes, j, x) != 0.0)).collect();
        let m = supported.len() * modes.len();
        let mut z = DMatrix::zeros(n, m);
        for (jj, &j) in supported.iter().enumerate() {
            for (i, mode) in modes.iter().enumerate() {
                let col = jj * modes.len() + i;
                for c in 0..n_cells {
                    let h = hat(&nodes, j, mids[c]);
                    if h != 0.0 {
                        for v in 0..n_v {
                            z[(c * n_v + v, col)] = h * mode[v];
                        }
                    }
                }
            }
        }
        let az: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|k| {
                let col: Vec<f64> = z.column(k).iter().copied().collect();
                apply(&col)
            })
            .collect();
        let wz = DMatrix::from_fn(n, m, |r, k| w[r] * z[(r, k)]);
        let g = wz.tr_mul(&z);
        let az = DMatrix::from_fn(n, m, |r, k| az[k][r]);
        let e = wz.tr_mul(&az);
        let e_inv = e.try_inverse()?;
        let g_inv = g.try_inverse()?;
        Some(Self { z, w, correction: e_inv - g_inv })
    }

    /// `M⁻¹ r`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let wr = DVector::from_iterator(r.len(), r.iter().zip(&self.w).map(|(a, b)| a * b));
        let y = &self.correction * self.z.tr_mul(&wr);
        let zy = &self.z * y;
        r.iter().zip(zy.iter()).map(|(a, b)| a + b).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_nodes_cover_the_slab() {
        for l in [5.0, 41.3, 82.6, 330.0] {
            let n = coarse_nodes(l);
            assert_eq!(n[0], 0.0);
            assert_eq!(*n.last().unwrap(), l);
            assert!(n.windows(2).all(|p| p[1] > p[0]));
        }
    }

    #[test]
    fn exact_on_the_coarse_space() {
        // A = I + low-rank coupling inside the coarse space: M⁻¹ inverts it.
        let eta: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        let vw = vec![0.5, 0.5];
        let mode: Vec<f64> = vec![1.0, 1.0];
        let n = 2 * 20;
        let apply = |x: &[f64]| -> Vec<f64> {
            let s: f64 = x.iter().sum::<f64>() / n as f64;
            x.iter().map(|v| 0.1 * v + 0.9 * s).collect()
        };
        let cs = CoarseSpace::build(&eta, &vw, &[&mode], apply).unwrap();
        // A constant vector lies in the coarse space and is solved exactly.
        let b = vec![1.0; n];
        let x = cs.apply(&b);
        let ax = apply(&x);
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).abs() < 1e-10);
        }
    }
}
