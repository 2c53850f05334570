//! Discrete-velocity laboratory for the half-space (Milne) boundary-layer
//! problem of the linearized Boltzmann equation with hard-sphere collisions,
//! in its classical form and with the geometric correction that bends
//! characteristics near a curved wall.
//!
//! Module map:
//!
//! * [`velocity_grid`] — polar velocity grid, Maxwellian, quadrature.
//! * [`collision`] — hard-sphere operator `L = ν − K`, null basis, gap.
//! * [`geometry_force`] — cutoffs, force `G` and potential `W`.
//! * [`characteristics`] — exact characteristic flow, turning points,
//!   optical depths.
//! * [`milne_solver`] — finite-slab and half-space solves, fluid limit,
//!   correction via the endomorphism on the fluid modes, mass-flux
//!   adjustment, decay fits.
//! * [`analysis`] — grazing-derivative blow-up and the classical versus
//!   geometric boundary-layer gap.
//! * [`cli`] — configuration, orchestration and artifact emission.

pub mod error;
pub mod quadrature;
pub mod velocity_grid;
pub mod geometry_force;
pub mod collision;
pub mod characteristics;
pub mod milne_solver;
pub mod analysis;
pub mod cli;

pub use error::{MilneError, Result};
