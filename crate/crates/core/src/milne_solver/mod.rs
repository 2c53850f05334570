//! The ε-Milne problem and its classical counterpart.
//!
//! ```text
//! v_eta ∂_η g + G(η)(v_phi² ∂_{v_eta} g − v_eta v_phi ∂_{v_phi} g) + L g = S,
//! g(0, v) = h(v) for v_eta > 0,   ⟨v_eta √μ, g(0)⟩ = m_f,
//! ```
//!
//! solved on a finite slab `[0, L]` with specular reflection at `η = L` and
//! extended to the half space by slab doubling. The fluid limit
//! `g_∞ = Σ D_i ψ_i` is extracted from the far end of the slab; the map
//! `T: h̃ ↦ g̃_∞` on the fluid modes is inverted to build the boundary
//! correction that makes the layer decay.

mod coarse;
mod correction;
mod eta_grid;
mod gmres;
mod half_space;
mod problem;
mod slab;
mod sweep;

pub use coarse::{coarse_nodes, CoarseSpace};
pub use correction::{
    adjust_mass_flux, build_t_matrix, correct_boundary, Correction, FluxAdjustment, TMatrix, CORRECTED_D_TOL,
    RESPONSE_FLOOR,
};
pub use eta_grid::{build_eta_grid, subdivide};
pub use gmres::{gmres, GmresResult};
pub use half_space::{
    decay_profile, extract_q, extract_q_infinity, fit_decay, fit_decay_against, fit_log_linear, FIT_WINDOW, identities,
    q_at_level, solve_half_space, DecayFit, HalfSpaceSolution, IdentityReport,
};
pub use problem::{
    counterexample_profile, sqrt_mu, BoundaryData, MilneProblem, Profile, ProfileFn, SlabOptions, SolverMethod,
    SolverOptions, Source, SourceFn,
};
pub use slab::{apply_k_columns, norm_weights, problem_eta_grid, solve_on_geometry, solve_slab, SlabSolution};
pub use sweep::{SegCoef, SlabGeometry, Step, Uncollided};

#[cfg(test)]
mod tests;
