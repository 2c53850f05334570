use super::*;
use crate::milne_solver::solve_slab;
use crate::velocity_grid::build_grid;
use proptest::prelude::*;
use std::sync::OnceLock;

fn op() -> &'static CollisionOperator {
    static OP: OnceLock<CollisionOperator> = OnceLock::new();
    OP.get_or_init(|| CollisionOperator::build(&build_grid(8.0, 16, 32).unwrap(), None).unwrap())
}

fn problem(mode: ForceMode, boundary: BoundaryData) -> MilneProblem<'static> {
    let mut p = MilneProblem::new(ForceField::new(0.01, mode).unwrap(), op(), boundary, 0.0);
    p.slab.length = Some(16.0);
    p
}

#[test]
fn sqrt_maxwellian_in_the_quarter_gaussian_norm() {
    let grid = &op().grid;
    let f = grid.map(sqrt_mu);
    let w = NormWeights::new(0.0, 0.25).unwrap();
    let norm = weighted_sup_norm(grid, &f, w);
    assert!((norm - (2.0 * std::f64::consts::PI).powf(-0.5)).abs() < 1e-14, "{norm}");
    assert_eq!(weighted_sup_norm(grid, &vec![0.0; grid.len()], w), 0.0);
}

#[test]
fn norm_weights_are_range_checked() {
    assert!(NormWeights::new(0.0, 0.3).is_err());
    assert!(NormWeights::new(-1.0, 0.1).is_err());
    assert!(NormWeights::new(2.0, 0.25).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn weighted_norm_is_monotone_in_both_exponents(
        seed in 0u64..1000,
        t1 in 0.0f64..3.0, dt in 0.0f64..3.0,
        z1 in 0.0f64..0.25, dz in 0.0f64..0.25,
    ) {
        let grid = &op().grid;
        let f: Vec<f64> = (0..grid.len()).map(|k| ((k as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
        let z2 = (z1 + dz).min(0.25);
        let lo = weighted_sup_norm(grid, &f, NormWeights::new(t1, z1).unwrap());
        let hi_t = weighted_sup_norm(grid, &f, NormWeights::new(t1 + dt, z1).unwrap());
        let hi_z = weighted_sup_norm(grid, &f, NormWeights::new(t1, z2).unwrap());
        prop_assert!(hi_t >= lo);
        prop_assert!(hi_z >= lo);
    }
}

#[test]
fn predicted_gap_closed_forms() {
    // Tabulated values (rounded intermediates) and the exact closed forms.
    assert!((predicted_gap(1.0, 1.0) - 0.113047).abs() < 1e-5);
    assert!((predicted_gap(2.0, 1.0) - 0.155181).abs() < 1e-5);
    assert!((predicted_gap(1.0, 1.0) - 0.113_042_259_031_189_8).abs() < 1e-14);
    assert!((predicted_gap(2.0, 1.0) - 0.155_189_039_949_410_6).abs() < 1e-14);
    assert!(predicted_gap(1e-12, 1.0) < 1e-11);
    assert_eq!(predicted_gap(0.0, 1.0), 0.0);
}

#[test]
fn probe_reproduces_grid_values() {
    let o = op();
    for mode in [ForceMode::Classical, ForceMode::Geometric] {
        let sol = solve_slab(&problem(mode, BoundaryData::counterexample(50.0))).unwrap();
        let upward: Vec<usize> = (0..o.len()).filter(|&k| o.grid.nodes[k].v_eta > 0.0).collect();
        for (k, node) in [(3usize, upward[5]), (10, upward[40]), (12, upward[150])] {
            let v = o.grid.nodes[node];
            let p = probe(o, &sol, sol.eta[k], v).unwrap();
            let g = sol.g[(node, k)];
            // Classical segments are exact; curved segments interpolate the
            // collided source at their feet, the probe follows the exact path.
            let tol = if mode == ForceMode::Classical { 1e-6 } else { 1e-3 };
            assert!((p.value - g).abs() < tol * (1.0 + g.abs()), "{mode:?} level {k} node {node}: {} vs {g}", p.value);
        }
        assert!(probe(o, &sol, 0.1, Velocity::new(-0.2, 0.5)).is_err());
        assert!(probe(o, &sol, 1e3, Velocity::new(0.2, 0.5)).is_err());
    }
}

#[test]
fn stationary_data_gives_no_gap_and_no_wall_derivative() {
    let o = op();
    for i in [0usize, 3] {
        let geo = solve_slab(&problem(ForceMode::Geometric, BoundaryData::mode(i))).unwrap();
        let cls = solve_slab(&problem(ForceMode::Classical, BoundaryData::mode(i))).unwrap();
        let r = gap_from_solutions(o, &geo, &cls, 1.0).unwrap();
        let tol = geo.residual.max(1e-8);
        assert!(r.measured_gap <= 2.0 * tol, "ψ{i}: gap {:.3e}", r.measured_gap);
        let exact = null_mode(i, Velocity::new(r.point.1, r.point.2));
        assert!((r.w_geo - exact).abs() < 1e-8, "ψ{i}: {} vs {exact}", r.w_geo);
        for t in [0.1, 0.01] {
            let d = grazing_derivative(o, &geo, Velocity::new(t, (1.0 - t * t).sqrt()));
            assert!(d.abs() * t < 1e-8, "ψ{i}: t·∂g = {:.3e}", d * t);
        }
    }
}

#[test]
fn grazing_derivative_sentinel_and_ladder_checks() {
    let o = op();
    let sol = solve_slab(&problem(ForceMode::Classical, BoundaryData::mode(0))).unwrap();
    assert!(grazing_derivative(o, &sol, Velocity::new(0.0, 1.0)).is_infinite());
    let p = problem(ForceMode::Classical, BoundaryData::counterexample(50.0));
    assert!(matches!(grazing_scan(&p, &[0.01, 0.02]), Err(MilneError::Parameter(_))));
    assert!(matches!(grazing_scan(&p, &[0.01]), Err(MilneError::Parameter(_))));
    assert!(matches!(grazing_scan(&p, &[0.01, 1e-7]), Err(MilneError::Resolution(_))));
}

#[test]
fn grazing_report_fits_the_power_law() {
    let ladder = [0.04, 0.02, 0.01, 0.005];
    let d: Vec<f64> = ladder.iter().map(|t| 0.7 / t + 0.01).collect();
    let r = grazing_report(ForceMode::Classical, 0.01, &ladder, d);
    assert!((r.slope + 1.0).abs() < 0.05, "{}", r.slope);
    assert!(r.product_change < 0.01);
    let flat = grazing_report(ForceMode::Classical, 0.01, &ladder, vec![0.0; 4]);
    assert_eq!(flat.slope, 0.0);
}

#[test]
fn counterexample_derivative_blows_up_like_one_over_t() {
    let o = op();
    let sol = solve_slab(&problem(ForceMode::Classical, BoundaryData::counterexample(50.0))).unwrap();
    let ladder = [0.02, 0.01, 0.005];
    let d: Vec<f64> =
        ladder.iter().map(|&t| grazing_derivative(o, &sol, Velocity::new(t, (1.0 - t * t).sqrt())).abs()).collect();
    let r = grazing_report(ForceMode::Classical, 0.01, &ladder, d);
    assert!((-1.2..=-0.8).contains(&r.slope), "{r:?}");
    assert!(r.products.iter().all(|&p| p > 0.1), "{r:?}");
}

#[test]
fn gap_points_are_validated() {
    assert!(check_gap_point(0.01, 1.0).is_ok());
    assert!(check_gap_point(0.01, 0.0).is_err());
    assert!(check_gap_point(0.3, 1.0).is_err());
    assert!(check_gap_point(0.25, 20.0).is_err());
    let (eta, v) = gap_point(0.01, 2.0);
    assert!((eta - 0.02).abs() < 1e-15 && (v.speed() - 1.0).abs() < 1e-15);
}
