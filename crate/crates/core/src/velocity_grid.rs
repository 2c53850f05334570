//! Polar discretization of the two-dimensional velocity space.
//!
//! Nodes sit on `n_rings` speed rings `rᵢ` and `n_theta` uniformly spaced
//! angles `θⱼ = 2π(j+½)/n_theta`, with the convention
//! `v_eta = r cos θ`, `v_phi = r sin θ`. Node `(i, j)` has flat index
//! `i·n_theta + j`, so every ring is a contiguous block.
//!
//! The radial rule is a Gauss rule for the weight `r·exp(−r²/2)` on
//! `[0, v_max]`, rescaled so that `Σ wᵢ f(rᵢ) ≈ ∫ f(r) r dr`. It integrates
//! every `μ·polynomial` moment exactly up to truncation at `v_max`. The angular
//! rule is the midpoint rule, which is spectrally accurate for periodic
//! integrands and exactly symmetric under `θ → −θ` and `θ → π − θ`.

use crate::error::{MilneError, Result};
use crate::quadrature::gauss_radial_maxwell;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A velocity `(v_eta, v_phi)`: normal and tangential components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Velocity {
    /// Normal component (positive points into the domain).
    pub v_eta: f64,
    /// Tangential component.
    pub v_phi: f64,
}

impl Velocity {
    /// Builds a velocity from its components.
    pub fn new(v_eta: f64, v_phi: f64) -> Self {
        Self { v_eta, v_phi }
    }

    /// Builds a velocity from speed and angle.
    pub fn from_polar(r: f64, theta: f64) -> Self {
        Self { v_eta: r * theta.cos(), v_phi: r * theta.sin() }
    }

    /// Squared speed `|v|²`.
    pub fn speed_sq(&self) -> f64 {
        self.v_eta * self.v_eta + self.v_phi * self.v_phi
    }

    /// Speed `|v|`.
    pub fn speed(&self) -> f64 {
        self.speed_sq().sqrt()
    }

    /// Polar angle in `(−π, π]`.
    pub fn angle(&self) -> f64 {
        self.v_phi.atan2(self.v_eta)
    }

    /// Specular mirror `(−v_eta, v_phi)`.
    pub fn mirrored(&self) -> Self {
        Self { v_eta: -self.v_eta, v_phi: self.v_phi }
    }
}

/// The standard Maxwellian `μ(v) = exp(−|v|²/2)/(2π)`.
pub fn maxwellian(v: Velocity) -> f64 {
    (-0.5 * v.speed_sq()).exp() / (2.0 * PI)
}

/// A sparse interpolation stencil: node indices with weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil4 {
    /// Node indices (angular indices on a ring, or flat node indices).
    pub idx: [usize; 4],
    /// Interpolation weights; they sum to one.
    pub w: [f64; 4],
}

impl Stencil4 {
    /// Applies the stencil to a slice indexed like `idx`, with an offset.
    #[inline]
    pub fn apply(&self, values: &[f64], offset: usize) -> f64 {
        self.w[0] * values[offset + self.idx[0]]
            + self.w[1] * values[offset + self.idx[1]]
            + self.w[2] * values[offset + self.idx[2]]
            + self.w[3] * values[offset + self.idx[3]]
    }
}

/// Cubic Lagrange weights for equispaced nodes `0, 1, 2, 3` evaluated at `t`.
#[inline]
pub fn lagrange4(t: f64) -> [f64; 4] {
    let a = t;
    let b = t - 1.0;
    let c = t - 2.0;
    let d = t - 3.0;
    [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0]
}

/// Cubic Lagrange weights for arbitrary nodes `x[0..4]` evaluated at `t`.
pub fn lagrange4_nonuniform(x: [f64; 4], t: f64) -> [f64; 4] {
    let mut w = [1.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                w[i] *= (t - x[j]) / (x[i] - x[j]);
            }
        }
    }
    w
}

/// Wraps an angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

/// Polar velocity grid with combined quadrature weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    /// Truncation radius.
    pub v_max: f64,
    /// Ring speeds, ascending.
    pub rings: Vec<f64>,
    /// Radial weights: `Σ wᵢ f(rᵢ) ≈ ∫₀^{v_max} f(r) r dr`.
    pub ring_weights: Vec<f64>,
    /// Angles per ring.
    pub n_theta: usize,
    /// Ring angles `θⱼ`.
    pub thetas: Vec<f64>,
    /// Flattened nodes, ring-major.
    pub nodes: Vec<Velocity>,
    /// Combined node weights `wᵢ·2π/n_theta`.
    pub weights: Vec<f64>,
}

/// Builds the polar grid.
///
/// Requires `v_max > 0`, `n_rings ≥ 4` and `n_theta ≥ 8` divisible by four (so
/// that the specular map permutes grid angles and no node lies on the grazing
/// set `v_eta = 0`).
pub fn build_grid(v_max: f64, n_rings: usize, n_theta: usize) -> Result<VelocityGrid> {
    if !(v_max.is_finite() && v_max > 0.0) {
        return Err(MilneError::Parameter(format!("v_max must be positive, got {v_max}")));
    }
    if n_rings < 4 {
        return Err(MilneError::Parameter(format!("n_rings must be at least 4, got {n_rings}")));
    }
    if n_theta < 8 || n_theta % 4 != 0 {
        return Err(MilneError::Parameter(format!(
            "n_theta must be at least 8 and divisible by 4, got {n_theta}"
        )));
    }
    let (rings, gauss_w) = gauss_radial_maxwell(v_max, n_rings);
    let ring_weights: Vec<f64> =
        rings.iter().zip(&gauss_w).map(|(&r, &w)| w * (0.5 * r * r).exp()).collect();
    let dtheta = 2.0 * PI / n_theta as f64;
    let thetas: Vec<f64> = (0..n_theta).map(|j| dtheta * (j as f64 + 0.5)).collect();
    let mut nodes = Vec::with_capacity(n_rings * n_theta);
    let mut weights = Vec::with_capacity(n_rings * n_theta);
    for (&r, &wr) in rings.iter().zip(&ring_weights) {
        for &t in &thetas {
            nodes.push(Velocity::from_polar(r, t));
            weights.push(wr * dtheta);
        }
    }
    Ok(VelocityGrid { v_max, rings, ring_weights, n_theta, thetas, nodes, weights })
}

impl VelocityGrid {
    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Whether the grid is empty (never true for a built grid).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of rings.
    pub fn n_rings(&self) -> usize {
        self.rings.len()
    }

    /// Angular spacing `2π/n_theta`.
    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    /// Flat index of node `(ring, angle)`.
    #[inline]
    pub fn index(&self, ring: usize, j: usize) -> usize {
        ring * self.n_theta + j
    }

    /// Ring of a flat index.
    #[inline]
    pub fn ring_of(&self, k: usize) -> usize {
        k / self.n_theta
    }

    /// Angular index of a flat index.
    #[inline]
    pub fn angle_of(&self, k: usize) -> usize {
        k % self.n_theta
    }

    /// Angular index of the specular image `θ → π − θ`.
    #[inline]
    pub fn mirror_angle(&self, j: usize) -> usize {
        let n = self.n_theta;
        (n / 2 + 2 * n - 1 - j) % n
    }

    /// Whether angular index `j` has `v_eta > 0`.
    #[inline]
    pub fn is_upward(&self, j: usize) -> bool {
        let n = self.n_theta;
        j < n / 4 || j >= 3 * n / 4
    }

    /// Angular index of local position `a` on the upward (`v_eta > 0`) or
    /// downward half ring; `a = 0` is adjacent to the lower grazing angle.
    #[inline]
    pub fn arc_index(&self, upward: bool, a: usize) -> usize {
        let n = self.n_theta;
        if upward {
            (3 * n / 4 + a) % n
        } else {
            (n / 4 + a) % n
        }
    }

    /// Evaluates `f` at every node.
    pub fn map<F: Fn(Velocity) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|&v| f(v)).collect()
    }

    /// The Maxwellian sampled on the grid.
    pub fn maxwellian_values(&self) -> Vec<f64> {
        self.map(maxwellian)
    }

    /// Quadrature `Σ W_k f_k` of a nodal field.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(MilneError::Parameter(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                self.len()
            )));
        }
        Ok(values.iter().zip(&self.weights).map(|(f, w)| f * w).sum())
    }

    /// Weighted inner product `⟨f, g⟩ = Σ W_k f_k g_k` (lengths must match).
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        f.iter().zip(g).zip(&self.weights).map(|((a, b), w)| a * b * w).sum()
    }

    /// Weighted L² norm.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// Continuous angular position `s` with `θ = Δθ(s + ½)`, in `[−½, n−½)`.
    #[inline]
    fn angular_position(&self, theta: f64) -> f64 {
        let s = wrap_angle(theta) / self.dtheta() - 0.5;
        if s >= self.n_theta as f64 - 0.5 {
            s - self.n_theta as f64
        } else {
            s
        }
    }

    /// Periodic cubic interpolation stencil in θ (angular indices).
    pub fn periodic_cubic(&self, theta: f64) -> Stencil4 {
        let n = self.n_theta as isize;
        let s = self.angular_position(theta);
        let base = s.floor() as isize - 1;
        let t = s - base as f64;
        let w = lagrange4(t);
        let mut idx = [0usize; 4];
        for (m, slot) in idx.iter_mut().enumerate() {
            *slot = (base + m as isize).rem_euclid(n) as usize;
        }
        Stencil4 { idx, w }
    }

    /// One-sided cubic stencil using only nodes of one half ring.
    ///
    /// `theta` must lie in the closed half ring (`cos θ ≥ 0` for `upward`,
    /// `cos θ ≤ 0` otherwise). Near the grazing ends the stencil is shifted
    /// inwards so that values never mix across `v_eta = 0`.
    pub fn half_ring_cubic(&self, theta: f64, upward: bool) -> Stencil4 {
        let half = self.n_theta / 2;
        let start = if upward { -0.5 * PI } else { 0.5 * PI };
        let mut rel = wrap_angle(theta - start);
        if rel > PI + 1.0 {
            // Slightly below the arc start because of roundoff.
            rel -= 2.0 * PI;
        }
        let s = rel / self.dtheta() - 0.5;
        let base = (s.floor() as isize - 1).clamp(0, half as isize - 4) as usize;
        let w = lagrange4(s - base as f64);
        let mut idx = [0usize; 4];
        for (m, slot) in idx.iter_mut().enumerate() {
            *slot = self.arc_index(upward, base + m);
        }
        Stencil4 { idx, w }
    }

    /// Bilinear `(r, θ)` interpolation stencil in flat node indices.
    ///
    /// Returns an empty stencil beyond `v_max`; inside the innermost and
    /// outside the outermost ring the nearest ring is used.
    pub fn bilinear(&self, v: Velocity) -> ([usize; 4], [f64; 4], usize) {
        let r = v.speed();
        if r > self.v_max {
            return ([0; 4], [0.0; 4], 0);
        }
        let n = self.n_theta;
        let s = self.angular_position(v.angle());
        let j0f = s.floor();
        let beta = s - j0f;
        let j0 = (j0f as isize).rem_euclid(n as isize) as usize;
        let j1 = (j0 + 1) % n;
        let nr = self.rings.len();
        if r <= self.rings[0] || r >= self.rings[nr - 1] {
            let i = if r <= self.rings[0] { 0 } else { nr - 1 };
            return ([self.index(i, j0), self.index(i, j1), 0, 0], [1.0 - beta, beta, 0.0, 0.0], 2);
        }
        let i = self.rings.partition_point(|&ri| ri <= r) - 1;
        let alpha = (r - self.rings[i]) / (self.rings[i + 1] - self.rings[i]);
        (
            [self.index(i, j0), self.index(i, j1), self.index(i + 1, j0), self.index(i + 1, j1)],
            [
                (1.0 - alpha) * (1.0 - beta),
                (1.0 - alpha) * beta,
                alpha * (1.0 - beta),
                alpha * beta,
            ],
            4,
        )
    }

    /// Smooth interpolation of a nodal field at an arbitrary velocity:
    /// cubic Lagrange across the four nearest rings, periodic cubic in θ.
    pub fn interpolate_smooth(&self, values: &[f64], v: Velocity) -> f64 {
        let r = v.speed();
        let st = self.periodic_cubic(v.angle());
        let nr = self.rings.len();
        let i = self.rings.partition_point(|&ri| ri <= r);
        let base = (i as isize - 2).clamp(0, nr as isize - 4) as usize;
        let xs = [self.rings[base], self.rings[base + 1], self.rings[base + 2], self.rings[base + 3]];
        let wr = lagrange4_nonuniform(xs, r);
        let mut acc = 0.0;
        for (m, w) in wr.iter().enumerate() {
            acc += w * st.apply(values, (base + m) * self.n_theta);
        }
        acc
    }

    /// Angular interpolation on a single ring (periodic cubic).
    pub fn interpolate_on_ring(&self, values: &[f64], ring: usize, theta: f64) -> f64 {
        self.periodic_cubic(theta).apply(values, ring * self.n_theta)
    }

    /// Ring whose speed is closest to `r`.
    pub fn nearest_ring(&self, r: f64) -> usize {
        let mut best = 0;
        for (i, &ri) in self.rings.iter().enumerate() {
            if (ri - r).abs() < (self.rings[best] - r).abs() {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> VelocityGrid {
        build_grid(8.0, 16, 32).unwrap()
    }

    #[test]
    fn maxwellian_values() {
        assert!((maxwellian(Velocity::new(0.0, 0.0)) - 0.159_154_943_091_895_35).abs() < 1e-15);
        let v = Velocity::new(1.0, 1.0);
        assert!((maxwellian(v) - (-1.0f64).exp() / (2.0 * PI)).abs() < 1e-16);
    }

    #[test]
    fn node_count_and_spacing() {
        let g = grid();
        assert_eq!(g.len(), 512);
        for j in 1..g.n_theta {
            assert!((g.thetas[j] - g.thetas[j - 1] - g.dtheta()).abs() < 1e-14);
        }
        assert!(g.weights.iter().all(|&w| w > 0.0));
        assert!(g.rings.iter().all(|&r| r > 0.0 && r < g.v_max));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(build_grid(6.0, 1, 8), Err(MilneError::Parameter(_))));
        assert!(matches!(build_grid(6.0, 16, 30), Err(MilneError::Parameter(_))));
        assert!(matches!(build_grid(-1.0, 16, 32), Err(MilneError::Parameter(_))));
        assert!(matches!(build_grid(6.0, 16, 4), Err(MilneError::Parameter(_))));
    }

    #[test]
    fn integrate_checks_length_and_zero() {
        let g = grid();
        assert!(matches!(g.integrate(&[1.0; 3]), Err(MilneError::Parameter(_))));
        assert_eq!(g.integrate(&vec![0.0; g.len()]).unwrap(), 0.0);
    }

    #[test]
    fn mirror_is_specular_involution() {
        let g = grid();
        for j in 0..g.n_theta {
            let m = g.mirror_angle(j);
            assert_eq!(g.mirror_angle(m), j);
            let a = Velocity::from_polar(1.0, g.thetas[j]);
            let b = Velocity::from_polar(1.0, g.thetas[m]);
            assert!((a.v_eta + b.v_eta).abs() < 1e-14 && (a.v_phi - b.v_phi).abs() < 1e-14);
            assert_ne!(g.is_upward(j), g.is_upward(m));
        }
    }

    #[test]
    fn arcs_cover_half_rings() {
        let g = grid();
        for a in 0..g.n_theta / 2 {
            assert!(g.is_upward(g.arc_index(true, a)));
            assert!(!g.is_upward(g.arc_index(false, a)));
        }
    }

    #[test]
    fn interpolation_reproduces_cubics_in_angle() {
        let g = grid();
        // On the upward arc, a cubic in θ (as a function on the arc) is exact.
        let f = |t: f64| 0.3 + t - 0.7 * t * t + 0.2 * t * t * t;
        let ring = 3;
        let vals: Vec<f64> = (0..g.len())
            .map(|k| {
                let mut t = g.thetas[g.angle_of(k)];
                if t > PI {
                    t -= 2.0 * PI;
                }
                f(t)
            })
            .collect();
        for &t in &[-1.5, -0.9, 0.0, 0.31, 1.2, 1.55] {
            let st = g.half_ring_cubic(t, true);
            let got = st.apply(&vals, ring * g.n_theta);
            assert!((got - f(t)).abs() < 1e-11, "{t}: {got} vs {}", f(t));
        }
        // Periodic stencil reproduces trigonometric data to high accuracy.
        let vals: Vec<f64> = (0..g.len()).map(|k| g.thetas[g.angle_of(k)].cos()).collect();
        for &t in &[0.0, 1.0, 3.0, 6.2] {
            let got = g.interpolate_on_ring(&vals, 2, t);
            assert!((got - t.cos()).abs() < 2e-4);
        }
    }

    #[test]
    fn bilinear_is_partition_of_unity_inside() {
        let g = grid();
        let (_, w, n) = g.bilinear(Velocity::new(0.7, -1.3));
        assert_eq!(n, 4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let (_, _, n) = g.bilinear(Velocity::new(9.0, 0.0));
        assert_eq!(n, 0);
    }
}
