use super::*;
use crate::collision::CollisionOperator;
use crate::error::MilneError;
use crate::geometry_force::{ForceField, ForceMode};
use crate::velocity_grid::{build_grid, Velocity};
use std::sync::{Arc, OnceLock};

fn op() -> &'static CollisionOperator {
    static OP: OnceLock<CollisionOperator> = OnceLock::new();
    OP.get_or_init(|| CollisionOperator::build(&build_grid(8.0, 16, 32).unwrap(), None).unwrap())
}

fn field(mode: ForceMode) -> ForceField {
    ForceField::new(0.01, mode).unwrap()
}

fn problem(mode: ForceMode, boundary: BoundaryData, m_f: f64) -> MilneProblem<'static> {
    let mut p = MilneProblem::new(field(mode), op(), boundary, m_f);
    p.slab.length = Some(16.0);
    p
}

fn smooth_profile() -> BoundaryData {
    let f: ProfileFn = Arc::new(|v: Velocity| (1.0 + 0.5 * v.v_eta + 0.3 * v.v_phi) * (-v.speed_sq() / 3.0).exp());
    BoundaryData { basis: [0.0; 4], profile: Profile::Function(f) }
}

fn max_dev(sol: &SlabSolution, target: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for k in 0..sol.eta.len() {
        for (v, t) in target.iter().enumerate() {
            m = m.max((sol.g[(v, k)] - t).abs());
        }
    }
    m
}

#[test]
fn zero_problem_is_trivial() {
    for mode in [ForceMode::Classical, ForceMode::Geometric] {
        let sol = solve_slab(&problem(mode, BoundaryData::zero(), 0.0)).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.g.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn stationary_modes_are_reproduced() {
    let o = op();
    for mode in [ForceMode::Classical, ForceMode::Geometric] {
        for i in [0usize, 3] {
            let sol = solve_slab(&problem(mode, BoundaryData::mode(i), 0.0)).unwrap();
            let dev = max_dev(&sol, &o.basis.psi[i]);
            assert!(dev < 1e-8, "{mode:?} ψ{i}: deviation {dev:.3e}");
        }
    }
}

#[test]
fn frozen_transport_matches_closed_form() {
    let o = op();
    let grid = &o.grid;
    let mut p = problem(ForceMode::Classical, smooth_profile(), 0.0);
    p.solver.freeze_k = true;
    let sol = solve_slab(&p).unwrap();
    let length = sol.length();
    let mut err = 0.0f64;
    for (k, &eta) in sol.eta.iter().enumerate() {
        for (node, &v) in grid.nodes.iter().enumerate() {
            let nu = o.nu[node];
            let exact = if v.v_eta > 0.0 {
                p.boundary.eval(grid, v) * (-nu * eta / v.v_eta).exp()
            } else {
                p.boundary.eval(grid, v.mirrored()) * (-nu * (2.0 * length - eta) / -v.v_eta).exp()
            };
            err = err.max((sol.g[(node, k)] - exact).abs());
        }
    }
    assert!(err < 1e-10, "closed-form deviation {err:.3e}");
}

#[test]
fn inflow_and_specular_conditions_hold() {
    let o = op();
    let grid = &o.grid;
    for mode in [ForceMode::Classical, ForceMode::Geometric] {
        let mut b = smooth_profile();
        b.basis = [0.2, 0.0, -0.3, 0.1];
        let sol = solve_slab(&problem(mode, b.clone(), 0.0)).unwrap();
        let n = sol.eta.len() - 1;
        for (node, &v) in grid.nodes.iter().enumerate() {
            let ring = grid.ring_of(node);
            let j = grid.angle_of(node);
            if v.v_eta > 0.0 {
                assert!((sol.g[(node, 0)] - b.eval(grid, v)).abs() < 1e-10);
            }
            let image = grid.index(ring, grid.mirror_angle(j));
            assert!((sol.g[(node, n)] - sol.g[(image, n)]).abs() < 1e-12);
        }
    }
}

#[test]
fn classical_flux_is_constant() {
    let o = op();
    let sol = solve_slab(&problem(ForceMode::Classical, smooth_profile(), 0.3)).unwrap();
    for k in 0..sol.eta.len() {
        let q = q_at_level(o, &sol, k);
        assert!((q[1] - 0.3).abs() < 1e-8, "level {k}: q1 = {}", q[1]);
    }
}

#[test]
fn geometric_flux_invariant_and_orthogonality() {
    let o = op();
    let mut b = smooth_profile();
    b.basis = [0.0, 1.0, 0.5, 0.0];
    let mut p = problem(ForceMode::Geometric, b, 0.7);
    p.solver.sweep_profile = true;
    let sol = solve_slab(&p).unwrap();
    let id = identities(o, &sol);
    assert!(id.flux_invariant < 1e-6, "{id:?}");
    assert!(id.energy_increase < 1e-6, "{id:?}");
    assert!((q_at_level(o, &sol, 0)[1] - 0.7).abs() < 1e-6);
}

#[test]
fn richardson_and_gmres_agree() {
    let mut p = problem(ForceMode::Geometric, BoundaryData::mode(2), 0.0);
    p.slab.length = Some(6.0);
    let a = solve_slab(&p).unwrap();
    p.solver.method = SolverMethod::Richardson;
    p.solver.max_iters = 20_000;
    let b = solve_slab(&p).unwrap();
    let diff = (&a.g - &b.g).amax();
    assert!(diff < 1e-7, "difference {diff:.3e}");
}

#[test]
fn extracting_q_of_a_fluid_mode() {
    let o = op();
    let sol = solve_slab(&problem(ForceMode::Classical, BoundaryData::mode(2), 0.0)).unwrap();
    for eta in [0.0, 0.37, 5.0, sol.length()] {
        let q = extract_q(o, &sol, eta);
        for (i, qi) in q.iter().enumerate() {
            let e = if i == 2 { 1.0 } else { 0.0 };
            assert!((qi - e).abs() < 1e-8, "q at {eta}: {q:?}");
        }
    }
}

#[test]
fn half_space_limits_of_simple_data() {
    let p = problem(ForceMode::Geometric, BoundaryData::mode(0), 0.0);
    let sol = solve_half_space(&p).unwrap();
    let e = [1.0, 0.0, 0.0, 0.0];
    for i in 0..4 {
        assert!((sol.d[i] - e[i]).abs() < 1e-8, "{:?}", sol.d);
    }
    let zero = solve_half_space(&problem(ForceMode::Geometric, BoundaryData::zero(), 0.0)).unwrap();
    assert_eq!(zero.d, [0.0; 4]);
    assert!(zero.k0.is_none());
    assert!(sol.d_history.len() >= 2);
}

#[test]
fn tail_that_has_not_decayed_is_rejected() {
    let mut p = problem(ForceMode::Classical, BoundaryData::counterexample(5.0), 0.0);
    p.slab.length = Some(2.0);
    let sol = solve_slab(&p).unwrap();
    let err = extract_q_infinity(op(), &sol, 0.1, 1e-6).unwrap_err();
    assert!(matches!(err, MilneError::Extraction(_)));
}

#[test]
fn log_linear_fit_recovers_rate() {
    let eta: Vec<f64> = (0..200).map(|k| 0.1 * k as f64).collect();
    let y: Vec<f64> = eta.iter().map(|e| 2.0 * (-0.7 * e).exp()).collect();
    let fit = fit_log_linear(&eta, &y).unwrap();
    assert!((fit.k0 - 0.7).abs() < 1e-12);
    assert!(fit.r2 > 0.999_999);
    assert!(fit.decades >= 1.0);
    let zero = vec![0.0; 200];
    assert!(matches!(fit_log_linear(&eta, &zero), Err(MilneError::NoDecay(_))));
}

#[test]
fn frozen_transport_decay_rate_is_the_collision_frequency() {
    let o = op();
    // Data concentrated around v = (1, 0): the slowest decay is ν(1)/1 = 1.
    let f: ProfileFn = Arc::new(|v: Velocity| (-8.0 * ((v.v_eta - 1.0).powi(2) + v.v_phi * v.v_phi)).exp());
    let mut p = problem(ForceMode::Classical, BoundaryData { basis: [0.0; 4], profile: Profile::Function(f) }, 0.0);
    p.solver.freeze_k = true;
    p.slab.length = Some(30.0);
    let sol = solve_slab(&p).unwrap();
    let fit = fit_decay(o, &sol).unwrap();
    assert!((fit.k0 - 1.0).abs() < 0.1, "{fit:?}");
}

#[test]
fn classical_t_matrix_is_the_identity() {
    let p = problem(ForceMode::Classical, BoundaryData::zero(), 0.0);
    let t = build_t_matrix(&p, false).unwrap();
    for j in 0..4 {
        assert!(t.column_defect(j) < 1e-6, "column {j}: {:?}", t.entries);
    }
}

#[test]
fn correction_of_stationary_data_is_the_data() {
    let p = problem(ForceMode::Geometric, BoundaryData::fluid([0.4, 0.0, 0.0, -0.2]), 0.0);
    let t = build_t_matrix(&p, false).unwrap();
    let c = correct_boundary(&p, &t).unwrap();
    assert!((c.h_tilde[0] - 0.4).abs() < 1e-8 && (c.h_tilde[3] + 0.2).abs() < 1e-8, "{:?}", c.h_tilde);
    assert!(c.solution.slab.g.amax() < 1e-8);
    let zero = correct_boundary(&problem(ForceMode::Geometric, BoundaryData::zero(), 0.0), &t).unwrap();
    assert_eq!(zero.h_tilde, [0.0; 4]);
}

#[test]
fn invalid_options_are_rejected() {
    let mut p = problem(ForceMode::Classical, BoundaryData::zero(), 0.0);
    p.slab.tail_fraction = 1.5;
    assert!(matches!(solve_slab(&p), Err(MilneError::Parameter(_))));
    let mut p = problem(ForceMode::Classical, BoundaryData::zero(), f64::NAN);
    p.slab.length = Some(4.0);
    assert!(matches!(solve_slab(&p), Err(MilneError::Parameter(_))));
}
