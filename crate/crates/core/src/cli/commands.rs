//! Orchestration of the six commands.

use super::artifacts::{
    artifact_path, read_data_csv, write_compare_csv, write_grazing_csv, write_json, write_solution_csv,
    write_t_matrix_csv, write_validate_csv,
};
use super::checks::{
    characteristic_checks, force_checks, null_space_residual, operator_checks, self_adjoint_defect, solver_checks,
    Check,
};
use super::config::{DataKind, RunConfig};
use super::{Command, EXIT_INCONCLUSIVE, EXIT_NUMERICAL, EXIT_OK};
use crate::analysis::{calibrate_concentration, gap_sweep, grazing_scan, GapReport};
use crate::collision::{calibrate_q0, CacheKey, CollisionOperator};
use crate::error::{MilneError, Result};
use crate::geometry_force::ForceField;
use crate::milne_solver::{
    adjust_mass_flux, build_t_matrix, correct_boundary, solve_half_space, BoundaryData, MilneProblem, Profile,
};
use crate::velocity_grid::build_grid;
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;

/// Result of a command: its JSON summary and exit code.
#[derive(Clone, Debug)]
pub struct Outcome {
    /// Summary printed on stdout (no timings, no absolute paths).
    pub summary: Value,
    /// Process exit code.
    pub code: i32,
}

/// Runs `command` with the resolved configuration.
pub fn run(command: &Command, cfg: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Solve(_) => solve(cfg),
        Command::Correct(_) => correct(cfg),
        Command::Compare(_) => compare(cfg),
        Command::Grazing(_) => grazing(cfg),
        Command::Validate(_) => validate(cfg),
        Command::Kernel(_) => kernel(cfg),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn header(command: &str, cfg: &RunConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("config_hash".into(), json!(cfg.hash()));
    m.insert("seed".into(), json!(cfg.run.seed));
    m
}

/// Builds the collision operator of the configured grid, or loads it from
/// `kernel.cache` (refusing a cache built for another grid).
pub fn build_operator(cfg: &RunConfig) -> Result<CollisionOperator> {
    let grid = build_grid(cfg.grid.v_max, cfg.grid.n_rings, cfg.grid.n_theta)
        .map_err(|e| MilneError::Config(format!("grid: {e}")))?;
    match &cfg.kernel.cache {
        Some(path) => {
            let expected = CacheKey {
                v_max: cfg.grid.v_max,
                n_rings: cfg.grid.n_rings,
                n_theta: cfg.grid.n_theta,
                q0: calibrate_q0(&grid),
            };
            eprintln!("loading operator cache {path}");
            CollisionOperator::load_cache(Path::new(path), &expected)
        }
        None => CollisionOperator::build(&grid, None),
    }
}

/// Inflow data of the configuration.
pub fn boundary_data(cfg: &RunConfig, op: &CollisionOperator) -> Result<BoundaryData> {
    let d = &cfg.data;
    Ok(match d.kind {
        DataKind::Zero => BoundaryData::zero(),
        DataKind::Basis => BoundaryData::fluid(d.basis),
        DataKind::Counterexample => BoundaryData { basis: d.basis, profile: Profile::Counterexample { m: d.m } },
        DataKind::File => {
            let path = d.file.as_deref().ok_or_else(|| MilneError::Config("data.file is not set".into()))?;
            let values = read_data_csv(Path::new(path), &op.grid)?;
            BoundaryData { basis: d.basis, profile: Profile::Sampled(Arc::new(values)) }
        }
    })
}

/// The problem described by the configuration.
pub fn build_problem<'a>(cfg: &RunConfig, op: &'a CollisionOperator) -> Result<MilneProblem<'a>> {
    let field = ForceField::new(cfg.problem.epsilon, cfg.problem.mode)?;
    let mut p = MilneProblem::new(field, op, boundary_data(cfg, op)?, cfg.data.mass_flux);
    p.slab.length = cfg.slab.length;
    p.slab.max_doublings = cfg.slab.max_doublings;
    p.slab.d_tol = cfg.slab.d_tol;
    p.slab.tail_fraction = cfg.slab.tail_fraction;
    p.solver.tol = cfg.solver.tol;
    p.solver.max_iters = cfg.solver.max_iters;
    p.solver.method = cfg.solver.method;
    Ok(p)
}

fn solve(cfg: &RunConfig) -> Result<Outcome> {
    let op = build_operator(cfg)?;
    let p = build_problem(cfg, &op)?;
    let sol = solve_half_space(&p)?;
    let dir = cfg.output_dir();
    let hash = cfg.hash();
    let csv_path = artifact_path(&dir, "solution", &hash, "csv");
    let json_path = artifact_path(&dir, "solution", &hash, "json");
    write_solution_csv(&csv_path, &op.grid, &sol.slab)?;
    let sidecar = json!({
        "D0": sol.d[0], "D1": sol.d[1], "D2": sol.d[2], "D3": sol.d[3],
        "K0": sol.k0,
        "flux0": sol.flux0,
        "iterations": sol.slab.iterations,
        "residual": sol.slab.residual,
        "config_hash": hash,
    });
    write_json(&json_path, &sidecar)?;
    let mut s = header("solve", cfg);
    s.insert("epsilon".into(), json!(cfg.problem.epsilon));
    s.insert("mode".into(), json!(cfg.problem.mode));
    s.insert("d".into(), json!(sol.d));
    s.insert("k0".into(), json!(sol.k0));
    s.insert("flux0".into(), json!(sol.flux0));
    s.insert("iterations".into(), json!(sol.slab.iterations));
    s.insert("residual".into(), json!(sol.slab.residual));
    s.insert("slab_length".into(), json!(sol.length()));
    s.insert("artifacts".into(), json!([file_name(&csv_path), file_name(&json_path)]));
    Ok(Outcome { summary: Value::Object(s), code: EXIT_OK })
}

fn correct(cfg: &RunConfig) -> Result<Outcome> {
    let op = build_operator(cfg)?;
    let mut p = build_problem(cfg, &op)?;
    let t = build_t_matrix(&p, false)?;
    let adjustment = match cfg.data.target_c0 {
        Some(c0) => {
            let adj = adjust_mass_flux(&p, &t, c0)?;
            p.mass_flux = adj.mass_flux;
            Some(adj)
        }
        None => None,
    };
    let c = correct_boundary(&p, &t)?;
    let dir = cfg.output_dir();
    let hash = cfg.hash();
    let t_path = artifact_path(&dir, "t_matrix", &hash, "csv");
    let sol_path = artifact_path(&dir, "solution", &hash, "csv");
    let json_path = artifact_path(&dir, "correction", &hash, "json");
    write_t_matrix_csv(&t_path, &t)?;
    write_solution_csv(&sol_path, &op.grid, &c.solution.slab)?;
    let defects: Vec<f64> = (0..4).map(|j| t.column_defect(j)).collect();
    let record = json!({
        "config_hash": hash,
        "t_matrix": t.entries,
        "column_defects": defects,
        "h_tilde": c.h_tilde,
        "d_uncorrected": c.d_uncorrected,
        "d_corrected": c.solution.d,
        "mass_flux": c.mass_flux,
        "decay": c.decay,
        "refinements": c.refinements,
        "adjustment": adjustment,
    });
    write_json(&json_path, &record)?;
    let mut s = header("correct", cfg);
    if let Value::Object(r) = record {
        for (k, v) in r {
            s.insert(k, v);
        }
    }
    s.insert("artifacts".into(), json!([file_name(&t_path), file_name(&sol_path), file_name(&json_path)]));
    Ok(Outcome { summary: Value::Object(s), code: EXIT_OK })
}

fn compare(cfg: &RunConfig) -> Result<Outcome> {
    let op = build_operator(cfg)?;
    let mut p = build_problem(cfg, &op)?;
    p.boundary = BoundaryData::counterexample(cfg.data.m);
    p.mass_flux = 0.0;
    let eps = &cfg.compare.epsilons;
    let ns = &cfg.compare.ns;
    let mut s = header("compare", cfg);
    let m = if cfg.compare.calibrate {
        let e_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
        let n_min = ns.iter().copied().fold(f64::INFINITY, f64::min);
        let cal = calibrate_concentration(&p, e_min, n_min, cfg.data.m, cfg.compare.max_steps)?;
        eprintln!("calibrated concentration M = {} after {} tries", cal.m, cal.tried.len());
        s.insert("calibration_tried".into(), json!(cal.tried));
        cal.m
    } else {
        cfg.data.m
    };
    p.boundary = BoundaryData::counterexample(m);
    let rows: Vec<GapReport> = gap_sweep(&p, eps, ns)?.into_iter().flatten().collect();
    let path = artifact_path(&cfg.output_dir(), "compare", &cfg.hash(), "csv");
    write_compare_csv(&path, &rows)?;
    let all_certified = rows.iter().all(|r| r.certified);
    s.insert("m".into(), json!(m));
    s.insert("rows".into(), json!(rows));
    s.insert("all_certified".into(), json!(all_certified));
    s.insert("artifacts".into(), json!([file_name(&path)]));
    let code = if all_certified { EXIT_OK } else { EXIT_INCONCLUSIVE };
    Ok(Outcome { summary: Value::Object(s), code })
}

fn grazing(cfg: &RunConfig) -> Result<Outcome> {
    let op = build_operator(cfg)?;
    let p = build_problem(cfg, &op)?;
    let report = grazing_scan(&p, &cfg.grazing.ladder)?;
    let path = artifact_path(&cfg.output_dir(), "grazing", &cfg.hash(), "csv");
    write_grazing_csv(&path, &report)?;
    let mut s = header("grazing", cfg);
    s.insert("report".into(), json!(report));
    s.insert("artifacts".into(), json!([file_name(&path)]));
    Ok(Outcome { summary: Value::Object(s), code: EXIT_OK })
}

/// Every check of `validate`, in order.
pub fn validation_checks(cfg: &RunConfig, op: &CollisionOperator) -> Result<Vec<Check>> {
    let mut checks = operator_checks(op, cfg.validate.trials, cfg.run.seed)?;
    checks.extend(force_checks()?);
    checks.extend(characteristic_checks()?);
    checks.extend(solver_checks(op, cfg.problem.epsilon)?);
    Ok(checks)
}

fn validate(cfg: &RunConfig) -> Result<Outcome> {
    let op = build_operator(cfg)?;
    let checks = validation_checks(cfg, &op)?;
    let path = artifact_path(&cfg.output_dir(), "validate", &cfg.hash(), "csv");
    write_validate_csv(&path, &checks)?;
    let all_pass = checks.iter().all(|c| c.pass);
    for c in checks.iter().filter(|c| !c.pass) {
        eprintln!("FAILED {}: {:e} vs {:e}", c.name, c.value, c.threshold);
    }
    let mut s = header("validate", cfg);
    s.insert("checks".into(), json!(checks));
    s.insert("all_pass".into(), json!(all_pass));
    s.insert("artifacts".into(), json!([file_name(&path)]));
    Ok(Outcome { summary: Value::Object(s), code: if all_pass { EXIT_OK } else { EXIT_NUMERICAL } })
}

fn kernel(cfg: &RunConfig) -> Result<Outcome> {
    let op = build_operator(cfg)?;
    let path = artifact_path(&cfg.output_dir(), "kernel", &cfg.hash(), "bin");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    op.save_cache(&path)?;
    let mut s = header("kernel", cfg);
    s.insert("cache_key".into(), json!(op.cache_key()));
    s.insert("nodes".into(), json!(op.len()));
    s.insert("nu_bounds".into(), json!(op.nu_bounds));
    s.insert("null_space_residual".into(), json!(null_space_residual(&op)));
    s.insert("self_adjoint_defect".into(), json!(self_adjoint_defect(&op)));
    s.insert("artifacts".into(), json!([file_name(&path)]));
    Ok(Outcome { summary: Value::Object(s), code: EXIT_OK })
}
