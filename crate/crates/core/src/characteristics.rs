//! Exact characteristic flow of the transport operator
//! `v_eta ∂_η + G(η)(v_phi² ∂_{v_eta} − v_eta v_phi ∂_{v_phi})`.
//!
//! Along a characteristic the speed squared `E = |v|²` and the tangential
//! invariant `C = v_phi e^{−W(η)}` are conserved, so the velocity at any other
//! distance `η′` is `φ′ = C e^{W(η′)}`, `ε′ = ±√(E − φ′²)`. Paths stay on
//! their speed ring; the force only rotates the velocity. A path moving
//! away from the wall turns back at `η⁺` where `W(η⁺) = ½ ln(E/C²)`, provided
//! that level is below `W(∞)`.
//!
//! Travel times use the closed form
//! `t = (b − a)(u_a + u_b)/(√(E u_a² − C²) + √(E u_b² − C²))`, `u = 1 − εy`,
//! on the uncut region, an adaptive Gauss–Kronrod quadrature (with the
//! substitution `y = η⁺ − s²` when the path turns inside the transition)
//! across the transition, and straight lines beyond it. Optical depths are
//! `ν(|v|)·t` because `ν` is radial and `|v|` is conserved.

use crate::collision::CollisionOperator;
use crate::error::{MilneError, Result};
use crate::geometry_force::ForceField;
use crate::quadrature::adaptive;
use crate::velocity_grid::Velocity;
use serde::{Deserialize, Serialize};

/// A point of phase space `(η, v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    /// Scaled distance from the wall.
    pub eta: f64,
    /// Velocity.
    pub v: Velocity,
}

impl PathState {
    /// Builds a state.
    pub fn new(eta: f64, v: Velocity) -> Self {
        Self { eta, v }
    }
}

/// The two conserved quantities of a characteristic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathInvariants {
    /// `E = v_eta² + v_phi²`.
    pub e: f64,
    /// `C = v_phi·e^{−W(η)}`.
    pub c2: f64,
}

/// Conserved quantities of the characteristic through `state`.
pub fn invariants(field: &ForceField, state: PathState) -> PathInvariants {
    PathInvariants {
        e: state.v.speed_sq(),
        c2: state.v.v_phi / field.exp_potential(state.eta),
    }
}

/// Velocity on the characteristic through `state` at distance `eta_prime`,
/// with non-negative normal component, and its specular mirror.
///
/// Fails with a turning-point error when the path cannot reach `eta_prime`.
pub fn transported_velocity(
    field: &ForceField,
    state: PathState,
    eta_prime: f64,
) -> Result<(Velocity, Velocity)> {
    let inv = invariants(field, state);
    let phi = inv.c2 * field.exp_potential(eta_prime);
    let rem = inv.e - phi * phi;
    if rem < -1e-14 * inv.e.max(f64::MIN_POSITIVE) {
        let eta_plus = eta_plus(field, state).unwrap_or(f64::INFINITY);
        return Err(MilneError::TurningPoint { eta_plus, requested: eta_prime });
    }
    let eps = rem.max(0.0).sqrt();
    Ok((Velocity::new(eps, phi), Velocity::new(-eps, phi)))
}

/// Turning point `η⁺ ≥ η` of the characteristic through `state`.
///
/// Errors with [`MilneError::NoTurn`] in classical mode, for `v_phi = 0`, or
/// when `W(∞)` is too small for the path to turn (Case II of the mild
/// formulation rather than Case III).
pub fn eta_plus(field: &ForceField, state: PathState) -> Result<f64> {
    if field.is_classical() {
        return Err(MilneError::NoTurn("classical mode: characteristics are straight".into()));
    }
    let v = state.v;
    if v.v_phi == 0.0 {
        return Err(MilneError::NoTurn("v_phi = 0: the path is never rotated".into()));
    }
    if v.v_eta == 0.0 {
        return Ok(state.eta);
    }
    let target = field.potential(state.eta) + 0.5 * (v.speed_sq() / (v.v_phi * v.v_phi)).ln();
    if target > field.w_infinity() {
        return Err(MilneError::NoTurn(format!(
            "required potential {target:.6e} exceeds W(inf) = {:.6e}",
            field.w_infinity()
        )));
    }
    let eta = field
        .inverse_potential(target)
        .ok_or_else(|| MilneError::NoTurn("potential level not reached".into()))?;
    Ok(eta.max(state.eta))
}

/// Turning point from invariants alone (`None` when the path never turns).
pub fn eta_plus_of(field: &ForceField, inv: PathInvariants) -> Option<f64> {
    if field.is_classical() || inv.c2 == 0.0 {
        return None;
    }
    let target = 0.5 * (inv.e / (inv.c2 * inv.c2)).ln();
    if target > field.w_infinity() {
        return None;
    }
    field.inverse_potential(target.max(0.0))
}

/// Travel time between distances `a ≤ b` along the characteristic with
/// invariants `inv` (the path must not turn strictly inside `(a, b)`).
///
/// Returns `+∞` if the path is grazing on a force-free stretch.
pub fn travel_time(field: &ForceField, inv: PathInvariants, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let e = inv.e;
    let c = inv.c2;
    if field.is_classical() {
        let ve = (e - c * c).max(0.0).sqrt();
        return if ve > 0.0 { (b - a) / ve } else { f64::INFINITY };
    }
    let eps = field.epsilon();
    let (eta1, eta2) = field.knees();
    let mut total = 0.0;
    // Uncut region: exact closed form.
    if a < eta1 {
        let hi = b.min(eta1);
        let ua = 1.0 - eps * a;
        let ub = 1.0 - eps * hi;
        let sa = (e * ua * ua - c * c).max(0.0).sqrt();
        let sb = (e * ub * ub - c * c).max(0.0).sqrt();
        if sa + sb == 0.0 {
            return f64::INFINITY;
        }
        total += (hi - a) * (ua + ub) / (sa + sb);
    }
    // Transition: quadrature, with a square-root substitution at a turn.
    let lo = a.max(eta1);
    let hi = b.min(eta2);
    if hi > lo {
        let turn = eta_plus_of(field, inv).filter(|&t| t <= eta2 * (1.0 + 1e-12) && t >= lo);
        let speed2 = |y: f64| e - c * c * (2.0 * field.potential(y)).exp();
        match turn {
            Some(tp) => {
                let w_star = field.potential(tp);
                let s_lo = (tp - hi).max(0.0).sqrt();
                let s_hi = (tp - lo).max(0.0).sqrt();
                total += adaptive(
                    |s| {
                        let y = tp - s * s;
                        // E − C²e^{2W} = −E·expm1(2(W − W(η⁺))), avoiding cancellation.
                        let d = -e * (2.0 * (field.potential(y) - w_star)).exp_m1();
                        if d <= 0.0 {
                            if s == 0.0 {
                                // Limit 2s/√(2E|G|s²).
                                2.0 / (2.0 * e * -field.force(tp)).sqrt()
                            } else {
                                0.0
                            }
                        } else {
                            2.0 * s / d.sqrt()
                        }
                    },
                    s_lo,
                    s_hi,
                    1e-12,
                    0.0,
                );
            }
            None => {
                total += adaptive(|y| 1.0 / speed2(y).max(f64::MIN_POSITIVE).sqrt(), lo, hi, 1e-12, 0.0);
            }
        }
    }
    // Force-free region: straight line.
    let lo = a.max(eta2);
    if b > lo {
        let phi = c * field.exp_potential(eta2);
        let ve = (e - phi * phi).max(0.0).sqrt();
        if ve == 0.0 {
            return f64::INFINITY;
        }
        total += (b - lo) / ve;
    }
    total
}

/// Optical depth `∫_{η′}^{η} ν(v′(y))/ε′(y) dy` along the characteristic
/// through `state`, for `η′ ≤ η`. The mirrored variant integrates along the
/// specular image, which has the same speed and therefore the same depth.
///
/// Returns `+∞` for a grazing path that never leaves `η`.
pub fn optical_depth(
    op: &CollisionOperator,
    field: &ForceField,
    state: PathState,
    eta_prime: f64,
    mirrored: bool,
) -> Result<f64> {
    let _ = mirrored;
    if eta_prime > state.eta {
        return Err(MilneError::Parameter(format!(
            "optical depth requires eta' <= eta, got {eta_prime} > {}",
            state.eta
        )));
    }
    if eta_prime == state.eta {
        return Ok(0.0);
    }
    let inv = invariants(field, state);
    let t = travel_time(field, inv, eta_prime, state.eta);
    if !t.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(op.collision_frequency_at(state.v.speed()) * t)
}

/// Result of an explicit integration of the characteristic ODE.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathTrace {
    /// States after every step (including the initial one).
    pub samples: Vec<PathState>,
    /// `max |E(s) − E(0)|`.
    pub e_drift: f64,
    /// `max |C(s) − C(0)|`.
    pub c2_drift: f64,
}

fn rhs(field: &ForceField, y: [f64; 3]) -> [f64; 3] {
    let g = field.force(y[0]);
    [y[1], g * y[2] * y[2], -g * y[1] * y[2]]
}

/// Classical fourth-order Runge–Kutta step of the characteristic ODE
/// `dη/ds = v_eta`, `dv_eta/ds = G v_phi²`, `dv_phi/ds = −G v_eta v_phi`.
pub fn rk4_step(field: &ForceField, state: PathState, ds: f64) -> PathState {
    let y = [state.eta, state.v.v_eta, state.v.v_phi];
    let add = |a: [f64; 3], k: [f64; 3], h: f64| [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2]];
    let k1 = rhs(field, y);
    let k2 = rhs(field, add(y, k1, 0.5 * ds));
    let k3 = rhs(field, add(y, k2, 0.5 * ds));
    let k4 = rhs(field, add(y, k3, ds));
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = y[i] + ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    PathState::new(out[0], Velocity::new(out[1], out[2]))
}

/// Integrates the characteristic ODE for `steps` steps of size `ds`
/// (negative `ds` traces backwards) and reports invariant drift.
pub fn trace_path(field: &ForceField, state: PathState, ds: f64, steps: usize) -> Result<PathTrace> {
    if steps < 2 {
        return Err(MilneError::Parameter(format!("trace_path needs at least 2 steps, got {steps}")));
    }
    let inv0 = invariants(field, state);
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(state);
    let mut cur = state;
    let mut e_drift: f64 = 0.0;
    let mut c_drift: f64 = 0.0;
    for _ in 0..steps {
        cur = rk4_step(field, cur, ds);
        let inv = invariants(field, cur);
        e_drift = e_drift.max((inv.e - inv0.e).abs());
        c_drift = c_drift.max((inv.c2 - inv0.c2).abs());
        samples.push(cur);
    }
    Ok(PathTrace { samples, e_drift, c2_drift: c_drift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry_force::ForceMode;

    fn geo(eps: f64) -> ForceField {
        ForceField::new(eps, ForceMode::Geometric).unwrap()
    }

    #[test]
    fn worked_turning_point() {
        let f = geo(0.01);
        let s = PathState::new(0.0, Velocity::new(0.1, 0.99f64.sqrt()));
        let ep = eta_plus(&f, s).unwrap();
        let closed = (1.0 - 0.99f64.sqrt()) / 0.01;
        assert!((ep - closed).abs() < 1e-10);
        assert!((ep - 0.501_256_28).abs() < 1e-6);
        let (v, m) = transported_velocity(&f, s, ep).unwrap();
        assert!(v.v_eta.abs() < 1e-6);
        assert_eq!(m.v_eta, -v.v_eta);
    }

    #[test]
    fn classical_is_straight() {
        let f = ForceField::new(0.01, ForceMode::Classical).unwrap();
        let s = PathState::new(2.0, Velocity::new(0.3, 0.8));
        let (v, _) = transported_velocity(&f, s, 7.0).unwrap();
        assert!((v.v_eta - s.v.v_eta).abs() < 1e-14 && v.v_phi == s.v.v_phi);
        assert!(matches!(eta_plus(&f, s), Err(MilneError::NoTurn(_))));
        let t = travel_time(&f, invariants(&f, s), 1.0, 2.0);
        assert!((t - 1.0 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn grazing_state_is_its_own_turning_point() {
        let f = geo(0.05);
        let s = PathState::new(1.5, Velocity::new(0.0, 1.2));
        assert_eq!(eta_plus(&f, s).unwrap(), 1.5);
    }

    #[test]
    fn no_turn_when_potential_is_exhausted() {
        let f = geo(0.01);
        // Steep paths need a large potential jump to turn.
        let s = PathState::new(0.0, Velocity::new(0.9, 0.1));
        assert!(matches!(eta_plus(&f, s), Err(MilneError::NoTurn(_))));
    }

    #[test]
    fn transported_velocity_rejects_points_past_the_turn() {
        let f = geo(0.01);
        let s = PathState::new(0.0, Velocity::new(0.1, 0.99f64.sqrt()));
        assert!(matches!(
            transported_velocity(&f, s, 3.0),
            Err(MilneError::TurningPoint { .. })
        ));
    }

    #[test]
    fn round_trip_recovers_velocity() {
        let f = geo(0.04);
        let s = PathState::new(0.7, Velocity::new(0.6, -0.45));
        let (v1, _) = transported_velocity(&f, s, 3.3).unwrap();
        let (v2, _) = transported_velocity(&f, PathState::new(3.3, v1), 0.7).unwrap();
        assert!((v2.v_eta - s.v.v_eta).abs() < 1e-12 && (v2.v_phi - s.v.v_phi).abs() < 1e-12);
    }

    #[test]
    fn travel_time_closed_form_matches_quadrature() {
        let f = geo(0.01);
        let inv = invariants(&f, PathState::new(0.0, Velocity::new(0.4, 0.7)));
        let t = travel_time(&f, inv, 0.3, 4.2);
        let q = adaptive(
            |y| {
                let phi = inv.c2 * f.exp_potential(y);
                1.0 / (inv.e - phi * phi).sqrt()
            },
            0.3,
            4.2,
            1e-14,
            0.0,
        );
        assert!((t - q).abs() < 1e-12 * q);
    }

    #[test]
    fn trace_conserves_invariants() {
        let f = geo(0.01);
        let s = PathState::new(0.0, Velocity::new(0.3, 1.1));
        let tr = trace_path(&f, s, 1e-3, 10_000).unwrap();
        assert!(tr.e_drift <= 1e-10 && tr.c2_drift <= 1e-10, "{} {}", tr.e_drift, tr.c2_drift);
        assert!(trace_path(&f, s, 1e-3, 1).is_err());
    }
}
