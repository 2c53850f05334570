//! Half-space solves, fluid-limit extraction, decay fits and the solution
//! identities used as invariants.

use super::problem::MilneProblem;
use super::slab::{problem_eta_grid, solve_on_geometry, SlabSolution};
use super::sweep::SlabGeometry;
use crate::collision::CollisionOperator;
use crate::error::{MilneError, Result};
use serde::{Deserialize, Serialize};

/// Solution of the half-space problem.
#[derive(Clone, Debug)]
pub struct HalfSpaceSolution {
    /// The slab solution at the accepted length.
    pub slab: SlabSolution,
    /// Fluid-limit coefficients `D₀..D₃` of `g_∞`.
    pub d: [f64; 4],
    /// Fitted decay rate of `g − g_∞`, when a clean decay window exists.
    pub k0: Option<f64>,
    /// Measured mass flux `⟨v_eta √μ, g(0)⟩`.
    pub flux0: f64,
    /// Fluid coefficients at every slab length tried.
    pub d_history: Vec<(f64, [f64; 4])>,
}

impl HalfSpaceSolution {
    /// Slab length in use.
    pub fn length(&self) -> f64 {
        self.slab.length()
    }
}

/// Fluid coefficients `q_i(η_k) = ⟨ψ_i, g(η_k)⟩` at level `k`.
pub fn q_at_level(op: &CollisionOperator, sol: &SlabSolution, k: usize) -> [f64; 4] {
    let col = sol.g.column(k);
    std::array::from_fn(|i| {
        op.basis.psi[i]
            .iter()
            .zip(col.iter())
            .zip(&op.grid.weights)
            .map(|((p, g), w)| p * g * w)
            .sum()
    })
}

/// Fluid coefficients at an arbitrary `η` (linear between levels).
pub fn extract_q(op: &CollisionOperator, sol: &SlabSolution, eta: f64) -> [f64; 4] {
    let n = sol.eta.len();
    let i = (sol.eta.partition_point(|&e| e <= eta).max(1) - 1).min(n - 2);
    let t = ((eta - sol.eta[i]) / (sol.eta[i + 1] - sol.eta[i])).clamp(0.0, 1.0);
    let a = q_at_level(op, sol, i);
    let b = q_at_level(op, sol, i + 1);
    std::array::from_fn(|m| a[m] * (1.0 - t) + b[m] * t)
}

/// `sup_v |w(η_k, v)|` with `w = g − Σ q_i ψ_i`.
fn remainder_sup(op: &CollisionOperator, sol: &SlabSolution, k: usize) -> f64 {
    let q = q_at_level(op, sol, k);
    let col = sol.g.column(k);
    (0..op.len())
        .map(|v| {
            let fluid: f64 = (0..4).map(|i| q[i] * op.basis.psi[i][v]).sum();
            (col[v] - fluid).abs()
        })
        .fold(0.0, f64::max)
}

/// Fluid limit `D`: the mean of `q` over the last `tail_fraction` of the
/// slab, after checking that the non-fluid part has decayed there below
/// `decay_tol·max(1, sup|g|)`.
pub fn extract_q_infinity(
    op: &CollisionOperator,
    sol: &SlabSolution,
    tail_fraction: f64,
    decay_tol: f64,
) -> Result<[f64; 4]> {
    let length = sol.length();
    let start = (1.0 - tail_fraction) * length;
    let levels: Vec<usize> = (0..sol.eta.len()).filter(|&k| sol.eta[k] >= start).collect();
    if levels.is_empty() {
        return Err(MilneError::Extraction("no levels in the averaging window".into()));
    }
    let scale = sol.g.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let tail = levels.iter().map(|&k| remainder_sup(op, sol, k)).fold(0.0, f64::max);
    if tail > decay_tol * scale {
        return Err(MilneError::Extraction(format!(
            "non-fluid part {tail:.3e} has not decayed below {:.1e} on [{start:.3}, {length:.3}]; increase L",
            decay_tol * scale
        )));
    }
    let mut d = [0.0; 4];
    for &k in &levels {
        let q = q_at_level(op, sol, k);
        for i in 0..4 {
            d[i] += q[i];
        }
    }
    Ok(d.map(|x| x / levels.len() as f64))
}

/// Solves the half-space problem by slab doubling until the fluid
/// coefficients settle.
pub fn solve_half_space(problem: &MilneProblem<'_>) -> Result<HalfSpaceSolution> {
    problem.validate()?;
    let op = problem.op;
    let mut length = problem.length();
    let mut history: Vec<(f64, [f64; 4])> = Vec::new();
    let mut last_err = String::new();
    for attempt in 0..=problem.slab.max_doublings {
        let eta = problem_eta_grid(problem, length)?;
        let geo = SlabGeometry::new(op, &problem.field, &eta)?;
        let slab = solve_on_geometry(problem, &geo)?;
        match extract_q_infinity(op, &slab, problem.slab.tail_fraction, problem.slab.decay_tol) {
            Ok(d) => {
                if let Some((_, prev)) = history.last() {
                    let change = (0..4).map(|i| (d[i] - prev[i]).abs()).fold(0.0, f64::max);
                    if change < problem.slab.d_tol {
                        history.push((length, d));
                        return Ok(finish(op, slab, d, history));
                    }
                    last_err = format!("D changed by {change:.3e} at L = {length:.3}");
                }
                history.push((length, d));
            }
            Err(e) => last_err = e.to_string(),
        }
        if attempt < problem.slab.max_doublings {
            length *= 2.0;
        }
    }
    Err(MilneError::SlabLength(format!(
        "fluid coefficients did not settle after {} doublings: {last_err}",
        problem.slab.max_doublings
    )))
}

fn finish(op: &CollisionOperator, slab: SlabSolution, d: [f64; 4], d_history: Vec<(f64, [f64; 4])>) -> HalfSpaceSolution {
    let flux0 = q_at_level(op, &slab, 0)[1];
    let k0 = fit_decay_against(op, &slab, d).ok().map(|f| f.k0);
    HalfSpaceSolution { slab, d, k0, flux0, d_history }
}

/// Least-squares exponential decay fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Decay rate (minus the slope of `ln‖·‖` against η).
    pub k0: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r2: f64,
    /// η range of the fitted window.
    pub window: (f64, f64),
    /// Number of levels in the window.
    pub points: usize,
    /// Decades of decay spanned by the window.
    pub decades: f64,
}

/// `sup_v |g(η_k) − g_∞|` per level.
pub fn decay_profile(op: &CollisionOperator, sol: &SlabSolution, d: [f64; 4]) -> Vec<f64> {
    let ginf: Vec<f64> = (0..op.len()).map(|v| (0..4).map(|i| d[i] * op.basis.psi[i][v]).sum()).collect();
    (0..sol.eta.len())
        .map(|k| sol.g.column(k).iter().zip(&ginf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect()
}

/// Decay fit of a corrected (decaying) solution: `g_∞ = 0`.
pub fn fit_decay(op: &CollisionOperator, sol: &SlabSolution) -> Result<DecayFit> {
    fit_decay_against(op, sol, [0.0; 4])
}

/// Decay fit of `g − Σ d_i ψ_i` over the window where its sup norm lies in
/// [`FIT_WINDOW`] times its wall value.
pub fn fit_decay_against(op: &CollisionOperator, sol: &SlabSolution, d: [f64; 4]) -> Result<DecayFit> {
    let prof = decay_profile(op, sol, d);
    fit_log_linear(&sol.eta, &prof)
}

/// Relative window `[lo, hi]·y₀` of the log-linear decay fit. The first three
/// decades are skipped: next to the wall, near-grazing data decays at rates
/// `ν/|v_eta|` that grow without bound and would bend the fit.
pub const FIT_WINDOW: (f64, f64) = (1e-7, 1e-3);

/// Fits `ln y = a − K0 η` over the [`FIT_WINDOW`] window (the first
/// contiguous run of levels inside it).
pub fn fit_log_linear(eta: &[f64], y: &[f64]) -> Result<DecayFit> {
    let y0 = y[0];
    if !(y0 > 0.0) {
        return Err(MilneError::NoDecay("the profile vanishes at the wall".into()));
    }
    let (lo, hi) = (FIT_WINDOW.0 * y0, FIT_WINDOW.1 * y0);
    let first = y.iter().position(|&v| v <= hi && v >= lo);
    let Some(first) = first else {
        return Err(MilneError::NoDecay("the profile never enters the fit window".into()));
    };
    let mut idx = Vec::new();
    for (k, &v) in y.iter().enumerate().skip(first) {
        if v < lo || v > hi {
            break;
        }
        idx.push(k);
    }
    if idx.len() < 3 {
        return Err(MilneError::NoDecay(format!("only {} levels in the fit window", idx.len())));
    }
    let xs: Vec<f64> = idx.iter().map(|&k| eta[k]).collect();
    let ls: Vec<f64> = idx.iter().map(|&k| y[k].ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let ml = ls.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxl: f64 = xs.iter().zip(&ls).map(|(x, l)| (x - mx) * (l - ml)).sum();
    let sll: f64 = ls.iter().map(|l| (l - ml).powi(2)).sum();
    let slope = sxl / sxx;
    let r2 = if sll > 0.0 { (sxl * sxl) / (sxx * sll) } else { 1.0 };
    let max = idx.iter().map(|&k| y[k]).fold(0.0, f64::max);
    let min = idx.iter().map(|&k| y[k]).fold(f64::INFINITY, f64::min);
    let decades = (max / min).log10();
    if !(slope < 0.0) {
        return Err(MilneError::NoDecay(format!("nonnegative log slope {slope:.3e}")));
    }
    Ok(DecayFit { k0: -slope, r2, window: (xs[0], *xs.last().unwrap()), points: idx.len(), decades })
}

/// Solution identities evaluated level by level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `max_k |q₁(η_k)e^{−W(η_k)} − q₁(0)| / max(|q₁(0)|, sup_k ‖g(η_k)‖)`.
    pub flux_invariant: f64,
    /// Largest increase of `e^{−W}·½⟨v_eta g, g⟩` between consecutive levels,
    /// relative to `max(1, max|·|)`.
    pub energy_increase: f64,
    /// Largest increase of `e^{+W}·½⟨v_eta g, g⟩` (same normalization).
    pub energy_increase_plus_w: f64,
    /// `max_k |⟨v_eta ψ_i, w⟩(η_k)|` for `i = 0, 2, 3`.
    pub orthogonality: f64,
}

/// Evaluates the flux, energy and orthogonality identities.
pub fn identities(op: &CollisionOperator, sol: &SlabSolution) -> IdentityReport {
    let grid = &op.grid;
    let field = &sol.field;
    let n_levels = sol.eta.len();
    let veta: Vec<f64> = grid.nodes.iter().map(|v| v.v_eta).collect();
    let mut q1w = Vec::with_capacity(n_levels);
    let mut h = Vec::with_capacity(n_levels);
    let mut orth = 0.0f64;
    let mut gnorm = 0.0f64;
    for k in 0..n_levels {
        let col: Vec<f64> = sol.g.column(k).iter().copied().collect();
        let q = q_at_level(op, sol, k);
        q1w.push(q[1] / field.exp_potential(sol.eta[k]));
        let vg: Vec<f64> = col.iter().zip(&veta).map(|(g, v)| g * v).collect();
        h.push(0.5 * grid.inner(&vg, &col));
        gnorm = gnorm.max(grid.norm(&col));
        let w: Vec<f64> = (0..op.len())
            .map(|v| col[v] - (0..4).map(|i| q[i] * op.basis.psi[i][v]).sum::<f64>())
            .collect();
        for i in [0usize, 2, 3] {
            let vp: Vec<f64> = op.basis.psi[i].iter().zip(&veta).map(|(p, v)| p * v).collect();
            orth = orth.max(grid.inner(&vp, &w).abs());
        }
    }
    let scale = q1w[0].abs().max(gnorm).max(f64::MIN_POSITIVE);
    let flux_invariant = q1w.iter().map(|x| (x - q1w[0]).abs()).fold(0.0, f64::max) / scale;
    let inc = |sign: f64| -> f64 {
        let e: Vec<f64> = (0..n_levels).map(|k| (sign * field.potential(sol.eta[k])).exp() * h[k]).collect();
        let s = e.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        e.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max) / s
    };
    IdentityReport {
        flux_invariant,
        energy_increase: inc(-1.0),
        energy_increase_plus_w: inc(1.0),
        orthogonality: orth,
    }
}
