//! Problem description: boundary data, source, mass flux and options.

use crate::collision::{null_mode, CollisionOperator};
use crate::error::{MilneError, Result};
use crate::geometry_force::ForceField;
use crate::velocity_grid::{lagrange4_nonuniform, maxwellian, Velocity, VelocityGrid};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// A velocity profile supplied as a closure.
pub type ProfileFn = Arc<dyn Fn(Velocity) -> f64 + Send + Sync>;
/// A phase-space source `S(η, v)` supplied as a closure.
pub type SourceFn = Arc<dyn Fn(f64, Velocity) -> f64 + Send + Sync>;

/// Non-fluid part of the inflow data.
#[derive(Clone, Default)]
pub enum Profile {
    /// No extra profile.
    #[default]
    None,
    /// The grazing-concentrated data `v_phi·exp(−(v_phi² − 1) − M v_eta²)`,
    /// equal to 1 at `v = (0, 1)`.
    Counterexample {
        /// Concentration parameter `M`.
        m: f64,
    },
    /// An arbitrary closure.
    Function(ProfileFn),
    /// Values at the grid nodes (only the `v_eta > 0` entries are used),
    /// interpolated cubically in speed and one-sidedly in angle.
    Sampled(Arc<Vec<f64>>),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::None => write!(f, "None"),
            Profile::Counterexample { m } => write!(f, "Counterexample {{ m: {m} }}"),
            Profile::Function(_) => write!(f, "Function(..)"),
            Profile::Sampled(v) => write!(f, "Sampled({} values)", v.len()),
        }
    }
}

/// The counterexample inflow profile `v_phi·exp(−(v_phi² − 1) − M v_eta²)`.
pub fn counterexample_profile(m: f64, v: Velocity) -> f64 {
    v.v_phi * (-(v.v_phi * v.v_phi - 1.0) - m * v.v_eta * v.v_eta).exp()
}

/// Inflow data `h(v)` on `{v_eta > 0}`: a fluid part `Σ b_i ψ_i` plus a
/// profile.
#[derive(Clone, Debug, Default)]
pub struct BoundaryData {
    /// Coefficients of `ψ₀..ψ₃`.
    pub basis: [f64; 4],
    /// Additional profile.
    pub profile: Profile,
}

impl BoundaryData {
    /// Zero data.
    pub fn zero() -> Self {
        Self::default()
    }

    /// Data equal to the fluid mode `ψ_i`.
    pub fn mode(i: usize) -> Self {
        let mut basis = [0.0; 4];
        basis[i] = 1.0;
        Self { basis, profile: Profile::None }
    }

    /// Fluid data `Σ b_i ψ_i`.
    pub fn fluid(basis: [f64; 4]) -> Self {
        Self { basis, profile: Profile::None }
    }

    /// The counterexample data with concentration `M`.
    pub fn counterexample(m: f64) -> Self {
        Self { basis: [0.0; 4], profile: Profile::Counterexample { m } }
    }

    /// Whether the data lies in the span of the fluid modes.
    pub fn is_fluid(&self) -> bool {
        matches!(self.profile, Profile::None)
    }

    /// Evaluates `h(v)` (meaningful for `v_eta ≥ 0`).
    pub fn eval(&self, grid: &VelocityGrid, v: Velocity) -> f64 {
        let mut h = 0.0;
        for (i, b) in self.basis.iter().enumerate() {
            if *b != 0.0 {
                h += b * null_mode(i, v);
            }
        }
        h + self.eval_profile(grid, v)
    }

    /// Evaluates the profile part of `h` only.
    pub fn eval_profile(&self, grid: &VelocityGrid, v: Velocity) -> f64 {
        match &self.profile {
            Profile::None => 0.0,
            Profile::Counterexample { m } => counterexample_profile(*m, v),
            Profile::Function(f) => f(v),
            Profile::Sampled(values) => sampled_upward(grid, values, v),
        }
    }

    /// Fluid coefficients minus `coeffs` (used to subtract the correction).
    pub fn minus_fluid(&self, coeffs: [f64; 4]) -> Self {
        let mut out = self.clone();
        for (b, c) in out.basis.iter_mut().zip(coeffs) {
            *b -= c;
        }
        out
    }

    /// `sup_v ⟨v⟩^θ e^{ζ|v|²} |h(v)|` over the inflow grid nodes.
    pub fn weighted_bound(&self, grid: &VelocityGrid, theta: f64, zeta: f64) -> f64 {
        grid.nodes
            .iter()
            .filter(|v| v.v_eta > 0.0)
            .map(|&v| {
                let w = (1.0 + v.speed_sq()).powf(0.5 * theta) * (zeta * v.speed_sq()).exp();
                w * self.eval(grid, v).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Interpolates sampled inflow values: one-sided cubic in angle on the
/// upward half ring, cubic Lagrange across rings.
fn sampled_upward(grid: &VelocityGrid, values: &[f64], v: Velocity) -> f64 {
    let r = v.speed();
    let st = grid.half_ring_cubic(v.angle(), true);
    let nr = grid.n_rings();
    let i = grid.rings.partition_point(|&ri| ri <= r);
    let base = (i as isize - 2).clamp(0, nr as isize - 4) as usize;
    let xs = [grid.rings[base], grid.rings[base + 1], grid.rings[base + 2], grid.rings[base + 3]];
    let wr = lagrange4_nonuniform(xs, r.clamp(grid.rings[0], grid.rings[nr - 1]));
    wr.iter()
        .enumerate()
        .map(|(m, w)| w * st.apply(values, (base + m) * grid.n_theta))
        .sum()
}

/// Source term of the transport equation.
#[derive(Clone, Default)]
pub enum Source {
    /// `S ≡ 0`.
    #[default]
    Zero,
    /// `S(η, v)` as a closure; it must decay in η.
    Function(SourceFn),
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Zero => write!(f, "Zero"),
            Source::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// η-grid and half-space controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabOptions {
    /// Slab length; `None` selects `max(20/ν₀, 1.2·η₂)`.
    pub length: Option<f64>,
    /// First cell next to the wall; `None` selects `10⁻³/ν₁`.
    pub first_cell: Option<f64>,
    /// Geometric growth factor of the cells.
    pub growth: f64,
    /// Largest cell.
    pub max_cell: f64,
    /// Every cell is split into this many equal cells (refinement studies).
    pub subdivide: usize,
    /// Maximum number of slab doublings in a half-space solve.
    pub max_doublings: usize,
    /// Convergence threshold on the fluid coefficients between doublings.
    pub d_tol: f64,
    /// Fraction of the slab (at its far end) used to average the fluid limit.
    pub tail_fraction: f64,
    /// Required decay of the non-fluid part over the averaging window,
    /// relative to `max(1, sup|g|)`.
    pub decay_tol: f64,
}

impl Default for SlabOptions {
    fn default() -> Self {
        Self {
            length: None,
            first_cell: None,
            growth: 1.15,
            max_cell: 0.5,
            subdivide: 1,
            max_doublings: 3,
            d_tol: 1e-6,
            tail_fraction: 0.1,
            decay_tol: 1e-6,
        }
    }
}

/// Linear solver for the collided part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    /// Restarted GMRES on the sweep-preconditioned fixed-point equation.
    Gmres,
    /// Plain source iteration (damped by ½ when the residual grows).
    Richardson,
}

/// Iteration controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Acceptance threshold: sup-norm update `≤ tol·(1 + ‖g‖)`.
    pub tol: f64,
    /// Relative residual target of the Krylov solve.
    pub krylov_tol: f64,
    /// Maximum number of sweeps.
    pub max_iters: usize,
    /// GMRES restart length.
    pub restart: usize,
    /// Linear solver.
    pub method: SolverMethod,
    /// Replace `K` by zero (pure transport; used as an oracle).
    pub freeze_k: bool,
    /// Precondition GMRES with the fluid-mode coarse correction.
    pub coarse: bool,
    /// Sweep the non-fluid profile as nodal inflow instead of carrying it
    /// exactly along characteristics. Suited to smooth profiles: the sweep
    /// keeps the discrete flux and energy laws, at the price of angular
    /// interpolation of the data.
    pub sweep_profile: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            krylov_tol: 1e-12,
            max_iters: 3000,
            restart: 120,
            method: SolverMethod::Gmres,
            freeze_k: false,
            coarse: true,
            sweep_profile: false,
        }
    }
}

/// One ε-Milne (or classical Milne) problem.
#[derive(Clone, Debug)]
pub struct MilneProblem<'a> {
    /// Force field (its mode selects geometric or classical transport).
    pub field: ForceField,
    /// Collision operator.
    pub op: &'a CollisionOperator,
    /// Inflow data on `{v_eta > 0}`.
    pub boundary: BoundaryData,
    /// Source term.
    pub source: Source,
    /// Prescribed mass flux `∫ v_eta √μ g(0, v) dv`.
    pub mass_flux: f64,
    /// Slab and η-grid controls.
    pub slab: SlabOptions,
    /// Iteration controls.
    pub solver: SolverOptions,
}

impl<'a> MilneProblem<'a> {
    /// Problem with zero source and default options.
    pub fn new(field: ForceField, op: &'a CollisionOperator, boundary: BoundaryData, mass_flux: f64) -> Self {
        Self {
            field,
            op,
            boundary,
            source: Source::Zero,
            mass_flux,
            slab: SlabOptions::default(),
            solver: SolverOptions::default(),
        }
    }

    /// Default slab length `max(20/ν₀, 1.2·η₂)`.
    pub fn default_length(&self) -> f64 {
        let (_, eta2) = self.field.knees();
        (20.0 / self.op.nu_bounds.nu0).max(1.2 * eta2)
    }

    /// Slab length in use.
    pub fn length(&self) -> f64 {
        self.slab.length.unwrap_or_else(|| self.default_length())
    }

    /// First cell in use.
    pub fn first_cell(&self) -> f64 {
        self.slab.first_cell.unwrap_or(1e-3 / self.op.nu_bounds.nu1)
    }

    /// Checks the problem invariants (finite weighted data, option ranges).
    pub fn validate(&self) -> Result<()> {
        let bound = self.boundary.weighted_bound(&self.op.grid, 3.0, 0.0);
        if !bound.is_finite() {
            return Err(MilneError::Parameter("boundary data is not finite on the grid".into()));
        }
        if !self.mass_flux.is_finite() {
            return Err(MilneError::Parameter("mass flux must be finite".into()));
        }
        if let Profile::Sampled(v) = &self.boundary.profile {
            if v.len() != self.op.grid.len() {
                return Err(MilneError::Parameter(format!(
                    "sampled boundary data has {} values but the grid has {} nodes",
                    v.len(),
                    self.op.grid.len()
                )));
            }
        }
        let s = &self.solver;
        if !(s.tol > 0.0 && s.krylov_tol > 0.0 && s.max_iters >= 1 && s.restart >= 1) {
            return Err(MilneError::Parameter("invalid solver tolerances".into()));
        }
        let o = &self.slab;
        if !(o.tail_fraction > 0.0 && o.tail_fraction < 1.0 && o.d_tol > 0.0 && o.subdivide >= 1) {
            return Err(MilneError::Parameter("invalid slab options".into()));
        }
        Ok(())
    }
}

/// `√μ(v)`.
#[inline]
pub fn sqrt_mu(v: Velocity) -> f64 {
    maxwellian(v).sqrt()
}
