//! The named numerical checks run by `validate`: operator structure, force
//! properties, characteristic invariants and solver identities. Each check
//! carries its measured value and threshold; summaries contain no timings,
//! so they are reproducible byte for byte.

use crate::characteristics::{eta_plus, invariants, trace_path, PathState};
use crate::collision::CollisionOperator;
use crate::error::Result;
use crate::geometry_force::{check_force_ladder, ForceField, ForceMode};
use crate::milne_solver::{identities, solve_slab, BoundaryData, MilneProblem, Profile, ProfileFn};
use crate::velocity_grid::Velocity;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// How a value is compared with its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value ≤ threshold`.
    AtMost,
    /// `value > threshold`.
    Above,
}

/// One named check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// Check name.
    pub name: String,
    /// Measured value.
    pub value: f64,
    /// Threshold.
    pub threshold: f64,
    /// Comparison.
    pub relation: Relation,
    /// Outcome.
    pub pass: bool,
}

impl Check {
    /// `value ≤ threshold` (NaN fails).
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, relation: Relation::AtMost, pass: value <= threshold }
    }

    /// `value > threshold` (NaN fails).
    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, relation: Relation::Above, pass: value > threshold }
    }
}

/// Largest violation of the weighted symmetry `W_a K_ab = W_b K_ba`,
/// relative to the largest weighted entry.
pub fn self_adjoint_defect(op: &CollisionOperator) -> f64 {
    let w = &op.grid.weights;
    let n = op.len();
    let mut defect = 0.0f64;
    let mut scale = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            let x = w[a] * op.k[(a, b)];
            scale = scale.max(x.abs());
            defect = defect.max((x - w[b] * op.k[(b, a)]).abs());
        }
    }
    if scale > 0.0 {
        defect / scale
    } else {
        0.0
    }
}

/// Largest `|L ψ_i|` over the grid and the four null modes.
pub fn null_space_residual(op: &CollisionOperator) -> f64 {
    op.basis.psi.iter().flat_map(|p| op.apply_l(p)).fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Smallest and largest `ν(v)/(1 + |v|)` over the grid nodes.
pub fn nu_ratio_range(op: &CollisionOperator) -> (f64, f64) {
    op.grid.nodes.iter().zip(&op.nu).fold((f64::INFINITY, 0.0f64), |(lo, hi), (v, nu)| {
        let r = nu / (1.0 + v.speed());
        (lo.min(r), hi.max(r))
    })
}

/// Operator structure: null space, symmetry, spectral gap, frequency bounds.
pub fn operator_checks(op: &CollisionOperator, trials: usize, seed: u64) -> Result<Vec<Check>> {
    let gap = op.rayleigh_gap(trials, seed)?;
    let (lo, hi) = nu_ratio_range(op);
    let b = op.nu_bounds;
    Ok(vec![
        Check::at_most("operator.null_space", null_space_residual(op), 1e-12),
        Check::at_most("operator.self_adjoint", self_adjoint_defect(op), 1e-10),
        Check::above("operator.gap_eigen", gap.eigen, 0.0),
        Check::above("operator.gap_rayleigh", gap.rayleigh_min, 0.0),
        Check::at_most("operator.gap_rayleigh_vs_eigen", gap.eigen - gap.rayleigh_min, 1e-10),
        Check::above("operator.nu0", b.nu0, 0.0),
        Check::at_most("operator.nu_ratio_min_defect", b.nu0 - lo, 1e-12),
        Check::at_most("operator.nu_ratio_max_defect", hi - b.nu1, 1e-12),
    ])
}

/// Force properties at ε ∈ {0.1, 0.01, 0.001}.
pub fn force_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let ladder = check_force_ladder(&[0.1, 0.01, 0.001])?;
    for r in &ladder {
        let e = r.epsilon;
        out.push(Check::at_most(format!("force.w_negativity[{e}]"), -r.w_min, 0.0));
        out.push(Check::at_most(format!("force.w_max[{e}]"), r.w_max, 1.0));
        out.push(Check::above(format!("force.w_monotone[{e}]"), if r.w_monotone { 1.0 } else { 0.0 }, 0.5));
        out.push(Check::at_most(format!("force.w_infinity[{e}]"), r.w_infinity, r.w_infinity_bound));
        out.push(Check::at_most(format!("force.int_g_sq[{e}]"), r.int_g_sq, r.int_g_sq_bound));
        // Finiteness: NaN and infinity both fail `≤ f64::MAX`.
        out.push(Check::at_most(format!("force.int_exp_gap_sq[{e}]"), r.int_exp_gap_sq, f64::MAX));
        out.push(Check::at_most(format!("force.int_tail_g_sq[{e}]"), r.int_tail_g_sq, f64::MAX));
    }
    for pair in ladder.windows(2) {
        let name = format!("force.w_infinity_decrease[{}->{}]", pair[0].epsilon, pair[1].epsilon);
        out.push(Check::above(name, pair[0].w_infinity - pair[1].w_infinity, 0.0));
    }
    Ok(out)
}

/// Turning point of the path through `state` by bisection on
/// `E − (C e^{W(η)})² = 0` (an independent oracle for `eta_plus`).
pub fn eta_plus_bisection(field: &ForceField, state: PathState) -> f64 {
    let inv = invariants(field, state);
    let f = |eta: f64| {
        let phi = inv.c2 * field.exp_potential(eta);
        inv.e - phi * phi
    };
    let (mut a, mut b) = (state.eta, state.eta + 1.0);
    while f(b) > 0.0 {
        b *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-15 {
            break;
        }
    }
    0.5 * (a + b)
}

/// Invariant drift over 10⁴ steps and the turning point of the path
/// through `(0, (0.1, √0.99))` at ε = 0.01.
pub fn characteristic_checks() -> Result<Vec<Check>> {
    let field = ForceField::new(0.01, ForceMode::Geometric)?;
    let drift_start = PathState::new(0.0, Velocity::new(0.6, 0.8));
    let trace = trace_path(&field, drift_start, 1e-3, 10_000)?;
    let state = PathState::new(0.0, Velocity::new(0.1, 0.99f64.sqrt()));
    let ep = eta_plus(&field, state)?;
    let inv = invariants(&field, state);
    let phi = inv.c2 * field.exp_potential(ep);
    let residual = (inv.e - phi * phi).abs() / inv.e;
    let closed = (1.0 - 0.99f64.sqrt()) / 0.01;
    Ok(vec![
        Check::at_most("characteristics.energy_drift", trace.e_drift, 1e-10),
        Check::at_most("characteristics.tangential_drift", trace.c2_drift, 1e-10),
        Check::at_most("characteristics.eta_plus_residual", residual, 1e-12),
        Check::at_most("characteristics.eta_plus_vs_bisection", (ep - eta_plus_bisection(&field, state)).abs(), 1e-8),
        Check::at_most("characteristics.eta_plus_vs_closed_form", (ep - closed).abs(), 1e-8),
    ])
}

/// Smooth non-fluid inflow profile used by the identity checks.
pub fn smooth_profile() -> BoundaryData {
    let f: ProfileFn = Arc::new(|v: Velocity| (1.0 + 0.5 * v.v_eta + 0.3 * v.v_phi) * (-v.speed_sq() / 3.0).exp());
    BoundaryData { basis: [0.0, 1.0, 0.5, 0.0], profile: Profile::Function(f) }
}

/// Solver identities on a slab of length 16 at the given ε: stationarity of
/// `ψ₀` and `ψ₃`, the frozen-collision closed form, the flux invariant
/// `q₁e^{−W}` and the energy law.
pub fn solver_checks(op: &CollisionOperator, epsilon: f64) -> Result<Vec<Check>> {
    let grid = &op.grid;
    let make = |mode: ForceMode, boundary: BoundaryData, m_f: f64| -> Result<MilneProblem<'_>> {
        let mut p = MilneProblem::new(ForceField::new(epsilon, mode)?, op, boundary, m_f);
        p.slab.length = Some(16.0);
        Ok(p)
    };
    let mut out = Vec::new();
    for i in [0usize, 3] {
        let sol = solve_slab(&make(ForceMode::Geometric, BoundaryData::mode(i), 0.0)?)?;
        let mut dev = 0.0f64;
        for k in 0..sol.eta.len() {
            for (v, t) in op.basis.psi[i].iter().enumerate() {
                dev = dev.max((sol.g[(v, k)] - t).abs());
            }
        }
        out.push(Check::at_most(format!("solver.stationary_psi{i}"), dev, 1e-8));
    }

    let mut frozen = make(ForceMode::Classical, smooth_profile(), 0.0)?;
    frozen.boundary.basis = [0.0; 4];
    frozen.solver.freeze_k = true;
    let sol = solve_slab(&frozen)?;
    let length = sol.length();
    let mut err = 0.0f64;
    for (k, &eta) in sol.eta.iter().enumerate() {
        for (node, &v) in grid.nodes.iter().enumerate() {
            let nu = op.nu[node];
            let exact = if v.v_eta > 0.0 {
                frozen.boundary.eval(grid, v) * (-nu * eta / v.v_eta).exp()
            } else {
                frozen.boundary.eval(grid, v.mirrored()) * (-nu * (2.0 * length - eta) / -v.v_eta).exp()
            };
            err = err.max((sol.g[(node, k)] - exact).abs());
        }
    }
    out.push(Check::at_most("solver.frozen_closed_form", err, 1e-10));

    let mut p = make(ForceMode::Geometric, smooth_profile(), 0.7)?;
    p.solver.sweep_profile = true;
    let id = identities(op, &solve_slab(&p)?);
    out.push(Check::at_most("solver.flux_invariant", id.flux_invariant, 1e-6));
    out.push(Check::at_most("solver.energy_increase", id.energy_increase, 1e-6));
    Ok(out)
}
