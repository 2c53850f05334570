//! Finite-slab solve with specular reflection at `η = L`.
//!
//! The mass flux is carried by an explicit particular solution: with
//! `s₀(η) = ⟨√μ, S⟩` the flux of any solution obeys `q₁′ = s₀ − G q₁`, so
//! `c(η) = e^{W}(m_f + ∫₀^η e^{−W} s₀)` is the exact flux profile. Writing
//! `g = ĝ + c(η)ψ₁` leaves a problem for `ĝ` with inflow data `h − m_f ψ₁`,
//! source `Ŝ = S − √μ(c′v_eta² + cG v_phi²)` and zero flux, which is what a
//! specularly reflecting slab supports.
//!
//! `ĝ` is split into its exact uncollided part (wall data carried along the
//! characteristics) and a collided part `x` (cell averages) solving
//! `x − Sweep(K x) = Sweep(K ḡ_unc + Ŝ)`.

use super::eta_grid::{build_eta_grid, subdivide};
use super::coarse::{coarse_nodes, CoarseSpace};
use super::gmres::gmres;
use super::problem::{sqrt_mu, MilneProblem, SolverMethod, Source};
use super::sweep::SlabGeometry;
use crate::collision::CollisionOperator;
use crate::error::{MilneError, Result};
use crate::geometry_force::{ForceField, ForceMode};
use crate::quadrature::gauss_legendre_on;
use crate::velocity_grid::{Velocity, VelocityGrid};
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::problem::BoundaryData;

/// Solution of one finite-slab problem.
#[derive(Clone, Debug)]
pub struct SlabSolution {
    /// η levels `0 = η_0 < … < η_N = L`.
    pub eta: Vec<f64>,
    /// Nodal values `g(η_k, v)` (`n_v × (N+1)`).
    pub g: DMatrix<f64>,
    /// Cell averages (`n_v × N`).
    pub g_avg: DMatrix<f64>,
    /// Cell means of the right-hand side `K ĝ + Ŝ` of the shifted problem.
    pub q_bar: DMatrix<f64>,
    /// Cell slopes of the same right-hand side.
    pub q_slope: DMatrix<f64>,
    /// Flux profile `c(η_k)` carried by `c ψ₁`.
    pub flux_profile: Vec<f64>,
    /// Source-driven part of the flux profile (zero without source).
    pub source_flux: Vec<f64>,
    /// Number of sweeps (operator applications plus the final sweep).
    pub iterations: usize,
    /// Final weighted sup-norm update relative to `1 + ‖g‖`.
    pub residual: f64,
    /// Residual history of the linear solver.
    pub history: Vec<f64>,
    /// Force field used.
    pub field: ForceField,
    /// Inflow data used.
    pub boundary: BoundaryData,
    /// Mass flux imposed.
    pub mass_flux: f64,
    /// Downward nodes whose characteristic turns inside the slab.
    pub turning_nodes: usize,
}

impl SlabSolution {
    /// Slab length.
    pub fn length(&self) -> f64 {
        *self.eta.last().expect("non-empty grid")
    }

    /// Nodal values at level `k`.
    pub fn level(&self, k: usize) -> Vec<f64> {
        self.g.column(k).iter().copied().collect()
    }

    /// Flux profile `c(η)` at an arbitrary distance.
    pub fn flux_shift(&self, eta: f64) -> f64 {
        let src = interp_levels(&self.eta, &self.source_flux, eta);
        self.mass_flux * self.field.exp_potential(eta) + src
    }

    /// Cell containing `eta` (clamped to the slab).
    pub fn cell_of(&self, eta: f64) -> usize {
        let n = self.eta.len() - 1;
        (self.eta.partition_point(|&e| e <= eta).max(1) - 1).min(n - 1)
    }
}

fn interp_levels(eta: &[f64], values: &[f64], x: f64) -> f64 {
    if values.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let n = eta.len();
    let i = (eta.partition_point(|&e| e <= x).max(1) - 1).min(n - 2);
    let t = ((x - eta[i]) / (eta[i + 1] - eta[i])).clamp(0.0, 1.0);
    values[i] * (1.0 - t) + values[i + 1] * t
}

/// Weight `⟨v⟩³` of the convergence norm.
pub fn norm_weights(grid: &VelocityGrid) -> Vec<f64> {
    grid.nodes.iter().map(|v| (1.0 + v.speed_sq()).powf(1.5)).collect()
}

fn weighted_sup(m: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    m.as_slice()
        .iter()
        .enumerate()
        .map(|(i, x)| (x * w[i % n]).abs())
        .fold(0.0, f64::max)
}

/// `K X` column-block by column-block; block boundaries do not depend on
/// the thread count, so the result is bitwise reproducible.
pub fn apply_k_columns(op: &CollisionOperator, x: &DMatrix<f64>) -> DMatrix<f64> {
    const BLOCK: usize = 16;
    let n = x.ncols();
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let parts: Vec<DMatrix<f64>> = starts
        .par_iter()
        .map(|&c0| {
            let w = BLOCK.min(n - c0);
            &op.k * x.columns(c0, w)
        })
        .collect();
    let mut out = DMatrix::zeros(x.nrows(), n);
    for (&c0, p) in starts.iter().zip(parts) {
        out.columns_mut(c0, p.ncols()).copy_from(&p);
    }
    out
}

/// The η grid of a problem at slab length `length`.
pub fn problem_eta_grid(problem: &MilneProblem<'_>, length: f64) -> Result<Vec<f64>> {
    let mut breaks = Vec::new();
    if problem.field.mode() == ForceMode::Geometric {
        let (a, b) = problem.field.knees();
        breaks.extend([a, b]);
    }
    let o = &problem.slab;
    let levels = build_eta_grid(length, problem.first_cell(), o.growth, o.max_cell, &breaks)?;
    Ok(subdivide(&levels, o.subdivide))
}

/// Source data of the shifted problem.
struct ShiftedSource {
    /// `c(η_k)`.
    flux: Vec<f64>,
    /// Source-driven part of `c` at the levels.
    source_flux: Vec<f64>,
    /// Cell averages of `c`.
    flux_avg: Vec<f64>,
    /// Cell averages of `Ŝ` (`n_v × N`).
    s_bar: DMatrix<f64>,
}

const GL_ORDER: usize = 8;

fn shifted_source(problem: &MilneProblem<'_>, eta: &[f64]) -> ShiftedSource {
    let grid = &problem.op.grid;
    let field = &problem.field;
    let m_f = problem.mass_flux;
    let n_v = grid.len();
    let n_cells = eta.len() - 1;
    let ew: Vec<f64> = eta.iter().map(|&e| field.exp_potential(e)).collect();
    let mut flux: Vec<f64> = ew.iter().map(|e| m_f * e).collect();
    let mut source_flux = vec![0.0; eta.len()];
    let mut flux_avg = vec![0.0; n_cells];
    let mut s_bar = DMatrix::zeros(n_v, n_cells);
    let shear: Vec<f64> = grid.nodes.iter().map(|&v| sqrt_mu(v) * (v.v_eta * v.v_eta - v.v_phi * v.v_phi)).collect();
    for c in 0..n_cells {
        let (a, b) = (eta[c], eta[c + 1]);
        let (xs, ws) = gauss_legendre_on(GL_ORDER, a, b);
        let mean_ew: f64 = xs.iter().zip(&ws).map(|(&x, w)| w * field.exp_potential(x)).sum::<f64>() / (b - a);
        flux_avg[c] = m_f * mean_ew;
        if m_f != 0.0 {
            // avg(G e^W) = −(e^{W(b)} − e^{W(a)})/(b − a) exactly.
            let f = -m_f * (ew[c + 1] - ew[c]) / (b - a);
            if f != 0.0 {
                for v in 0..n_v {
                    s_bar[(v, c)] = f * shear[v];
                }
            }
        }
    }
    if let Source::Function(s) = &problem.source {
        // s₀(η) = ⟨√μ, S(η)⟩ and the cumulative ∫₀^η e^{−W} s₀.
        let s0 = |y: f64| -> f64 {
            grid.nodes.iter().zip(&grid.weights).map(|(&v, w)| w * sqrt_mu(v) * s(y, v)).sum()
        };
        let integral_to = |a: f64, y: f64| -> f64 {
            if y <= a {
                return 0.0;
            }
            let (xs, ws) = gauss_legendre_on(GL_ORDER, a, y);
            xs.iter().zip(&ws).map(|(&x, w)| w * s0(x) / field.exp_potential(x)).sum()
        };
        let mut cum = vec![0.0; eta.len()];
        for c in 0..n_cells {
            cum[c + 1] = cum[c] + integral_to(eta[c], eta[c + 1]);
        }
        for k in 0..eta.len() {
            source_flux[k] = ew[k] * cum[k];
            flux[k] += source_flux[k];
        }
        let rows: Vec<(Vec<f64>, f64)> = (0..n_cells)
            .into_par_iter()
            .map(|c| {
                let (a, b) = (eta[c], eta[c + 1]);
                let (xs, ws) = gauss_legendre_on(GL_ORDER, a, b);
                let mut col = vec![0.0; n_v];
                let mut cs_mean = 0.0;
                for (&y, &wy) in xs.iter().zip(&ws) {
                    let cs = field.exp_potential(y) * (cum[c] + integral_to(a, y));
                    cs_mean += wy * cs;
                    let s0y = s0(y);
                    let gy = field.force(y);
                    for (slot, &v) in col.iter_mut().zip(&grid.nodes) {
                        let sm = sqrt_mu(v);
                        let val = s(y, v) - sm * s0y * v.v_eta * v.v_eta
                            - cs * gy * sm * (v.v_phi * v.v_phi - v.v_eta * v.v_eta);
                        *slot += wy * val;
                    }
                }
                (col.into_iter().map(|x| x / (b - a)).collect(), cs_mean / (b - a))
            })
            .collect();
        for (c, (col, cs)) in rows.into_iter().enumerate() {
            flux_avg[c] += cs;
            for v in 0..n_v {
                s_bar[(v, c)] += col[v];
            }
        }
    }
    ShiftedSource { flux, source_flux, flux_avg, s_bar }
}

/// Solves the finite-slab problem at the problem's own slab length.
pub fn solve_slab(problem: &MilneProblem<'_>) -> Result<SlabSolution> {
    problem.validate()?;
    let eta = problem_eta_grid(problem, problem.length())?;
    let geo = SlabGeometry::new(problem.op, &problem.field, &eta)?;
    solve_on_geometry(problem, &geo)
}

/// Solves on a precomputed geometry.
pub fn solve_on_geometry(problem: &MilneProblem<'_>, geo: &SlabGeometry) -> Result<SlabSolution> {
    let op = problem.op;
    let grid = &op.grid;
    let n_v = grid.len();
    let n_cells = geo.n_cells();
    let opts = &problem.solver;
    let weights = norm_weights(grid);
    let src = shifted_source(problem, &geo.eta);
    let m_f = problem.mass_flux;
    let boundary = &problem.boundary;
    // The fluid part of the data (including −m_f ψ₁) enters the sweep as
    // inflow, so that smooth data is interpolated as a whole and the fluid
    // modes stay exact; only the profile is carried analytically.
    let mut fluid = boundary.basis;
    fluid[1] -= m_f;
    let sweep_profile = opts.sweep_profile && !boundary.is_fluid();
    let inflow: Vec<f64> = (0..n_v)
        .map(|v| {
            let fl: f64 = (0..4).map(|i| fluid[i] * op.basis.psi[i][v]).sum();
            if sweep_profile {
                fl + boundary.eval_profile(grid, grid.nodes[v])
            } else {
                fl
            }
        })
        .collect();
    let inflow = Some(inflow.as_slice());
    let (g_unc, a_unc) = if boundary.is_fluid() || sweep_profile {
        (DMatrix::zeros(n_v, geo.eta.len()), DMatrix::zeros(n_v, n_cells))
    } else {
        geo.uncollided_fields(|v: Velocity| boundary.eval_profile(grid, v))
    };
    let apply_k = |x: &DMatrix<f64>| -> DMatrix<f64> {
        if opts.freeze_k {
            DMatrix::zeros(x.nrows(), x.ncols())
        } else {
            apply_k_columns(op, x)
        }
    };
    let base_q = apply_k(&a_unc) + &src.s_bar;
    let (x, iterations_before, history) = if opts.freeze_k {
        (geo.sweep_inflow(&base_q, inflow).1, 0usize, vec![0.0])
    } else {
        match opts.method {
            SolverMethod::Gmres => {
                let (_, b) = geo.sweep_inflow(&base_q, inflow);
                let operator = |v: &[f64]| -> Vec<f64> {
                    let xm = DMatrix::from_column_slice(n_v, n_cells, v);
                    let (_, s) = geo.sweep(&apply_k(&xm));
                    v.iter().zip(s.as_slice()).map(|(a, b)| a - b).collect()
                };
                let modes: Vec<&[f64]> = op.basis.psi.iter().map(|p| p.as_slice()).collect();
                let trivial = b.iter().all(|&x| x == 0.0);
                let coarse = if opts.coarse && !trivial {
                    CoarseSpace::build(&geo.eta, &grid.weights, &modes, operator)
                } else {
                    None
                };
                let mut matvecs = coarse.as_ref().map_or(0, |_| 4 * coarse_nodes(geo.eta[n_cells]).len());
                let precondition = |v: &[f64]| -> Vec<f64> {
                    match &coarse {
                        Some(c) => c.apply(v),
                        None => v.to_vec(),
                    }
                };
                let res = gmres(
                    |v: &[f64]| operator(&precondition(v)),
                    b.as_slice(),
                    opts.krylov_tol,
                    opts.restart,
                    opts.max_iters,
                );
                matvecs += res.matvecs;
                // Stagnation at roundoff is acceptable; the final sweep below
                // decides.
                let x = precondition(&res.x);
                (DMatrix::from_column_slice(n_v, n_cells, &x), matvecs, res.history)
            }
            SolverMethod::Richardson => {
                let mut x = DMatrix::<f64>::zeros(n_v, n_cells);
                let mut history = Vec::new();
                let mut prev = f64::INFINITY;
                let mut iters = 0;
                loop {
                    let q = apply_k(&x) + &base_q;
                    let (_, xn) = geo.sweep_inflow(&q, inflow);
                    iters += 1;
                    let upd = weighted_sup(&(&xn - &x), &weights);
                    let scale = 1.0 + weighted_sup(&(&xn + &a_unc), &weights);
                    history.push(upd / scale);
                    if upd <= 0.1 * opts.tol * scale {
                        x = xn;
                        break;
                    }
                    if iters >= opts.max_iters {
                        let tail = history[history.len().saturating_sub(10)..].to_vec();
                        return Err(MilneError::Divergence { iterations: iters, history: tail });
                    }
                    x = if upd > prev { &x + (&xn - &x) * 0.5 } else { xn };
                    prev = upd;
                }
                (x, iters, history)
            }
        }
    };
    // Final sweep: nodal values and the consistency check.
    let q_bar = apply_k(&(&a_unc + &x)) + &src.s_bar;
    let (lo, hi, slope) = geo.reconstruct(&q_bar);
    let (g_col, x_new) = geo.sweep_reconstructed(&lo, &hi, inflow);
    let total_avg = &a_unc + &x_new;
    let residual = weighted_sup(&(&x_new - &x), &weights) / (1.0 + weighted_sup(&total_avg, &weights));
    if !(residual <= opts.tol) {
        let mut history = history;
        history.push(residual);
        let tail = history[history.len().saturating_sub(10)..].to_vec();
        return Err(MilneError::Divergence { iterations: iterations_before + 1, history: tail });
    }
    let psi1 = &op.basis.psi[1];
    let mut g = g_unc + g_col;
    for k in 0..geo.eta.len() {
        let c = src.flux[k];
        if c != 0.0 {
            for v in 0..n_v {
                g[(v, k)] += c * psi1[v];
            }
        }
    }
    let mut g_avg = total_avg;
    for cidx in 0..n_cells {
        let c = src.flux_avg[cidx];
        if c != 0.0 {
            for v in 0..n_v {
                g_avg[(v, cidx)] += c * psi1[v];
            }
        }
    }
    Ok(SlabSolution {
        eta: geo.eta.clone(),
        g,
        g_avg,
        q_bar,
        q_slope: slope,
        flux_profile: src.flux,
        source_flux: src.source_flux,
        iterations: iterations_before + 1,
        residual,
        history,
        field: problem.field.clone(),
        boundary: problem.boundary.clone(),
        mass_flux: m_f,
        turning_nodes: geo.turning_nodes,
    })
}
