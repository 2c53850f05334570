//! The boundary correction `h̃`: the map `T` from fluid-mode data to the
//! fluid limit, its inversion, and the mass-flux adjustment.

use super::half_space::{fit_decay, solve_half_space, DecayFit, HalfSpaceSolution};
use super::problem::{BoundaryData, MilneProblem};
use crate::error::{MilneError, Result};
use crate::geometry_force::ForceMode;
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

/// Largest fluid limit accepted after correction.
pub const CORRECTED_D_TOL: f64 = 1e-5;

/// Smallest mass-flux response accepted by [`adjust_mass_flux`].
pub const RESPONSE_FLOOR: f64 = 1e-8;

/// The map `T`: column `j` holds the fluid limit of the problem with data
/// `ψ_j` and mass flux `⟨ψ₁, ψ_j⟩ = δ_{j1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TMatrix {
    /// `entries[i][j]`: coefficient of `ψ_i` in `T[ψ_j]`.
    pub entries: [[f64; 4]; 4],
    /// ε it was built at.
    pub epsilon: f64,
    /// Force mode it was built in.
    pub mode: ForceMode,
    /// Whether columns 0 and 3 were solved rather than set to the identity.
    pub verified: bool,
}

impl TMatrix {
    fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.entries[i][j])
    }

    /// `max_i |T_ij − δ_ij|`.
    pub fn column_defect(&self, j: usize) -> f64 {
        (0..4)
            .map(|i| (self.entries[i][j] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    /// Largest off-diagonal entry of column `j`.
    pub fn off_diagonal(&self, j: usize) -> f64 {
        (0..4).filter(|&i| i != j).map(|i| self.entries[i][j].abs()).fold(0.0, f64::max)
    }

    /// Determinant.
    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }

    /// Solves `T x = d`.
    pub fn solve(&self, d: [f64; 4]) -> Result<[f64; 4]> {
        let det = self.determinant();
        if !(det.abs() > 1e-10) {
            return Err(MilneError::CorrectionImpossible(format!("T is singular (det = {det:.3e})")));
        }
        let lu = self.matrix().lu();
        let x = lu
            .solve(&Vector4::from(d))
            .ok_or_else(|| MilneError::CorrectionImpossible("T could not be factorized".into()))?;
        Ok([x[0], x[1], x[2], x[3]])
    }
}

/// Builds `T` with the options (slab, solver, operator, field) of `template`.
/// Columns 0 and 3 are exact stationary solutions and are set to the
/// identity unless `verify` is set; columns 1 and 2 are always solved.
pub fn build_t_matrix(template: &MilneProblem<'_>, verify: bool) -> Result<TMatrix> {
    let mut entries = [[0.0; 4]; 4];
    for j in 0..4 {
        let column = if (j == 0 || j == 3) && !verify {
            let mut e = [0.0; 4];
            e[j] = 1.0;
            e
        } else {
            let mut p = template.clone();
            p.boundary = BoundaryData::mode(j);
            p.source = Default::default();
            p.mass_flux = if j == 1 { 1.0 } else { 0.0 };
            solve_half_space(&p)?.d
        };
        for i in 0..4 {
            entries[i][j] = column[i];
        }
    }
    let t = TMatrix { entries, epsilon: template.field.epsilon(), mode: template.field.mode(), verified: verify };
    let det = t.determinant();
    if !(det.abs() > 1e-10) {
        return Err(MilneError::CorrectionImpossible(format!("T is singular (det = {det:.3e})")));
    }
    Ok(t)
}

/// Outcome of [`correct_boundary`].
#[derive(Clone, Debug)]
pub struct Correction {
    /// Coefficients of `h̃ = Σ h̃_i ψ_i`.
    pub h_tilde: [f64; 4],
    /// Fluid limit of the uncorrected problem.
    pub d_uncorrected: [f64; 4],
    /// The corrected problem (data `h − h̃`, mass flux `m_f − h̃₁`).
    pub problem_data: BoundaryData,
    /// Mass flux of the corrected problem.
    pub mass_flux: f64,
    /// Solution of the corrected problem.
    pub solution: HalfSpaceSolution,
    /// Decay fit of the corrected solution (`None` when it vanishes).
    pub decay: Option<DecayFit>,
    /// Number of Newton refinements applied.
    pub refinements: usize,
}

/// Solves the uncorrected problem, sets `h̃ = T⁻¹ D`, and re-solves with
/// `h − h̃` so that the solution decays. One Newton step on `T` is taken if
/// the remaining limit exceeds [`CORRECTED_D_TOL`].
pub fn correct_boundary(problem: &MilneProblem<'_>, t: &TMatrix) -> Result<Correction> {
    let base = solve_half_space(problem)?;
    let d0 = base.d;
    let mut h_tilde = t.solve(d0)?;
    let mut refinements = 0;
    loop {
        let mut p = problem.clone();
        p.boundary = problem.boundary.minus_fluid(h_tilde);
        p.mass_flux = problem.mass_flux - h_tilde[1];
        // The corrected limit is zero, so measure convergence in absolute terms.
        let sol = solve_half_space(&p)?;
        let resid = sol.d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if resid <= CORRECTED_D_TOL {
            let decay = fit_decay(problem.op, &sol.slab).ok();
            return Ok(Correction {
                h_tilde,
                d_uncorrected: d0,
                problem_data: p.boundary.clone(),
                mass_flux: p.mass_flux,
                solution: sol,
                decay,
                refinements,
            });
        }
        if refinements >= 1 {
            return Err(MilneError::CorrectionImpossible(format!(
                "corrected fluid limit {resid:.3e} exceeds {CORRECTED_D_TOL:.0e} after a Newton step"
            )));
        }
        let delta = t.solve(sol.d)?;
        for (h, d) in h_tilde.iter_mut().zip(delta) {
            *h += d;
        }
        refinements += 1;
    }
}

/// Outcome of [`adjust_mass_flux`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxAdjustment {
    /// Mass flux achieving the target.
    pub mass_flux: f64,
    /// Target value of `h̃₀ + h̃₃`.
    pub target: f64,
    /// `h̃₀ + h̃₃` at the original mass flux.
    pub baseline: f64,
    /// `(T⁻¹E)₀ + (T⁻¹E)₃` for the unit-flux auxiliary limit `E`.
    pub response: f64,
    /// Raw `E₀ + E₃` of the auxiliary problem.
    pub e0_plus_e3: f64,
    /// Raw `E₁ + E₃` of the auxiliary problem.
    pub e1_plus_e3: f64,
    /// `h̃₀ + h̃₃` recomputed by a verification solve at the new mass flux.
    pub achieved: f64,
}

/// Chooses the mass flux so that the correction satisfies `h̃₀ + h̃₃ = C₀`,
/// by superposition with the zero-data unit-flux problem, then verifies it
/// with a fresh solve.
pub fn adjust_mass_flux(problem: &MilneProblem<'_>, t: &TMatrix, c0: f64) -> Result<FluxAdjustment> {
    let base = solve_half_space(problem)?;
    let hb = t.solve(base.d)?;
    let baseline = hb[0] + hb[3];
    let mut aux = problem.clone();
    aux.boundary = BoundaryData::zero();
    aux.source = Default::default();
    aux.mass_flux = 1.0;
    let e = solve_half_space(&aux)?.d;
    let he = t.solve(e)?;
    let response = he[0] + he[3];
    if !(response.abs() >= RESPONSE_FLOOR) {
        return Err(MilneError::DegenerateResponse(format!(
            "mass-flux response {response:.3e} (E₀+E₃ = {:.3e}, E₁+E₃ = {:.3e})",
            e[0] + e[3],
            e[1] + e[3]
        )));
    }
    let mass_flux = problem.mass_flux + (c0 - baseline) / response;
    let mut check = problem.clone();
    check.mass_flux = mass_flux;
    let hc = t.solve(solve_half_space(&check)?.d)?;
    Ok(FluxAdjustment {
        mass_flux,
        target: c0,
        baseline,
        response,
        e0_plus_e3: e[0] + e[3],
        e1_plus_e3: e[1] + e[3],
        achieved: hc[0] + hc[3],
    })
}
