//! Hard-sphere linearized collision operator `L = ν − K` on the velocity grid.
//!
//! With `q(v−u, ω) = q0·|v−u|·|cos φ|` (φ the angle between ω and `v−u`,
//! integrated over the half circle `ω·(v−u) ≥ 0`), the operator is
//!
//! * `ν(v) = ∫∫ q μ(u) dω du`,
//! * `K₁[f](v) = √μ(v) ∫∫ q √μ(u) f(u) dω du`,
//! * `K₂[f](v) = ∫∫ q √μ(u) (√μ(v*) f(u*) + √μ(u*) f(v*)) dω du`,
//! * `K = K₂ − K₁`,
//!
//! with `u* = u + ω(ω·(v−u))` and `v* = v − ω(ω·(v−u))`. The ω integral uses 64
//! uniform angles on the circle, and the 32 that satisfy `ω·(v−u) ≥ 0` contribute.
//! `f(u*)`, `f(v*)` are found by bilinear `(r, θ)` interpolation on the grid and
//! are zero beyond `v_max`.
//!
//! After assembly, `K` is symmetrized in the quadrature inner product. A
//! minimal symmetric update of rank at most eight is then applied so that
//! `Lψᵢ = 0` holds to roundoff on the four fluid modes.
//! `q0` is calibrated by default so that `ν(|v| = 1) = 1`.

use crate::error::{MilneError, Result};
use crate::velocity_grid::{maxwellian, Velocity, VelocityGrid};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

/// Number of uniform ω angles on the full circle.
pub const OMEGA_ANGLES: usize = 64;

/// Largest admissible relative residual `‖(ν−K)ψᵢ‖/‖ψᵢ‖` before correction.
pub const ASSEMBLY_SANITY_BOUND: f64 = 0.05;

/// Offsets `ψ_m` (relative to the direction of `v−u`) of the ω angles with
/// `cos ψ_m > 0`, and the angular step.
fn omega_rule() -> (Vec<f64>, f64) {
    let d = 2.0 * PI / OMEGA_ANGLES as f64;
    let offs = (0..OMEGA_ANGLES)
        .map(|m| d * (m as f64 + 0.5))
        .filter(|a| a.cos() > 0.0)
        .map(|a| if a > PI { a - 2.0 * PI } else { a })
        .collect();
    (offs, d)
}

/// `Σ_m |cos ψ_m| Δψ` over the admissible half circle (≈ 2).
fn omega_factor() -> f64 {
    let (offs, d) = omega_rule();
    offs.iter().map(|a| a.cos() * d).sum()
}

/// The fluid null basis `√μ·{1, v_eta, v_phi, (|v|²−2)/2}` on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullBasis {
    /// `ψ₀ … ψ₃` sampled at the nodes.
    pub psi: [Vec<f64>; 4],
}

/// `ψᵢ(v)` evaluated at an arbitrary velocity.
pub fn null_mode(i: usize, v: Velocity) -> f64 {
    let s = maxwellian(v).sqrt();
    match i {
        0 => s,
        1 => s * v.v_eta,
        2 => s * v.v_phi,
        3 => s * 0.5 * (v.speed_sq() - 2.0),
        _ => panic!("null mode index {i} out of range"),
    }
}

impl NullBasis {
    /// Samples the basis on a grid.
    pub fn new(grid: &VelocityGrid) -> Self {
        Self { psi: std::array::from_fn(|i| grid.map(|v| null_mode(i, v))) }
    }

    /// Gram matrix `⟨ψᵢ, ψⱼ⟩` under the grid quadrature.
    pub fn gram(&self, grid: &VelocityGrid) -> [[f64; 4]; 4] {
        let mut g = [[0.0; 4]; 4];
        for (i, row) in g.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = grid.inner(&self.psi[i], &self.psi[j]);
            }
        }
        g
    }
}

/// Collision frequency at an arbitrary velocity by quadrature over the grid.
pub fn collision_frequency_at_velocity(grid: &VelocityGrid, q0: f64, v: Velocity) -> f64 {
    let om = omega_factor();
    let mut acc = 0.0;
    for (u, w) in grid.nodes.iter().zip(&grid.weights) {
        let g = Velocity::new(v.v_eta - u.v_eta, v.v_phi - u.v_phi).speed();
        acc += w * maxwellian(*u) * g;
    }
    q0 * om * acc
}

/// Radial collision frequency `ν(r)`: the quadrature evaluated at speed `r`
/// on the first grid angle (the rule is invariant under the grid rotations,
/// so every grid angle gives the same value).
pub fn collision_frequency_radial(grid: &VelocityGrid, q0: f64, r: f64) -> f64 {
    collision_frequency_at_velocity(grid, q0, Velocity::from_polar(r, grid.thetas[0]))
}

/// Per-node collision frequency (ring-constant by construction).
pub fn collision_frequency(grid: &VelocityGrid, q0: f64) -> Result<Vec<f64>> {
    if !(q0.is_finite() && q0 > 0.0) {
        return Err(MilneError::Parameter(format!("q0 must be positive, got {q0}")));
    }
    let ring_nu: Vec<f64> = grid.rings.iter().map(|&r| collision_frequency_radial(grid, q0, r)).collect();
    Ok((0..grid.len()).map(|k| ring_nu[grid.ring_of(k)]).collect())
}

/// The `q0` for which `ν(1) = 1` under the grid quadrature.
pub fn calibrate_q0(grid: &VelocityGrid) -> f64 {
    1.0 / collision_frequency_radial(grid, 1.0, 1.0)
}

/// Assembles `K = K₂ − K₁` in nodal form (`(Kf)_a = Σ_b K_ab f_b`) and
/// symmetrizes it in the weighted inner product. No conservative correction.
pub fn assemble_k(grid: &VelocityGrid, q0: f64) -> Result<DMatrix<f64>> {
    if !(q0.is_finite() && q0 > 0.0) {
        return Err(MilneError::Parameter(format!("q0 must be positive, got {q0}")));
    }
    let n = grid.len();
    let (offs, dpsi) = omega_rule();
    let trig: Vec<(f64, f64)> = offs.iter().map(|a| (a.cos(), a.sin())).collect();
    let om = omega_factor();
    let sqrt_mu: Vec<f64> = grid.map(|v| maxwellian(v).sqrt());
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let v = grid.nodes[a];
            let mut row = vec![0.0; n];
            for b in 0..n {
                let u = grid.nodes[b];
                let rx = v.v_eta - u.v_eta;
                let ry = v.v_phi - u.v_phi;
                let g = (rx * rx + ry * ry).sqrt();
                if g == 0.0 {
                    continue;
                }
                let (ex, ey) = (rx / g, ry / g);
                let base = q0 * g * grid.weights[b] * sqrt_mu[b];
                // Loss part K₁.
                row[b] -= sqrt_mu[a] * base * om;
                for &(c, s) in &trig {
                    let ox = ex * c - ey * s;
                    let oy = ex * s + ey * c;
                    let proj = g * c;
                    let us = Velocity::new(u.v_eta + ox * proj, u.v_phi + oy * proj);
                    let vs = Velocity::new(v.v_eta - ox * proj, v.v_phi - oy * proj);
                    let wgt = base * c * dpsi;
                    let (idx, w, m) = grid.bilinear(us);
                    if m > 0 {
                        let coef = wgt * maxwellian(vs).sqrt();
                        for t in 0..m {
                            row[idx[t]] += coef * w[t];
                        }
                    }
                    let (idx, w, m) = grid.bilinear(vs);
                    if m > 0 {
                        let coef = wgt * maxwellian(us).sqrt();
                        for t in 0..m {
                            row[idx[t]] += coef * w[t];
                        }
                    }
                }
            }
            row
        })
        .collect();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for (a, row) in rows.iter().enumerate() {
        for (b, &val) in row.iter().enumerate() {
            k[(a, b)] = val;
        }
    }
    Ok(symmetrize_weighted(&k, &grid.weights))
}

/// `(K + W⁻¹KᵀW)/2`: the self-adjoint part of `K` for `⟨f, g⟩ = Σ W f g`.
pub fn symmetrize_weighted(k: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = k.nrows();
    let mut out = k.clone();
    for a in 0..n {
        for b in 0..n {
            out[(a, b)] = 0.5 * (k[(a, b)] + k[(b, a)] * weights[b] / weights[a]);
        }
    }
    out
}

fn to_symmetric(k: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = k.nrows();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    DMatrix::from_fn(n, n, |a, b| sw[a] * k[(a, b)] / sw[b])
}

fn from_symmetric(m: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = m.nrows();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    DMatrix::from_fn(n, n, |a, b| m[(a, b)] * sw[b] / sw[a])
}

/// Outcome of the conservative correction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectionReport {
    /// `‖(ν−K)ψᵢ‖/‖ψᵢ‖` before correction.
    pub residuals_before: [f64; 4],
    /// `max_i ‖(ν−K′)ψᵢ‖_∞` after correction.
    pub residual_after: f64,
    /// Frobenius norm of the update in symmetric coordinates.
    pub delta_norm: f64,
}

/// Minimal symmetric update `K′ = K + Δ` with `(ν − K′)ψᵢ = 0`, `i = 0..3`.
///
/// In coordinates `W^{1/2}` the problem reads `(M+Δ)Ψ = DΨ` with `M`, `Δ`
/// symmetric. With `R = DΨ − MΨ` and `Ψ⁺ = (ΨᵀΨ)⁻¹Ψᵀ`, the Frobenius-minimal
/// symmetric solution is `Δ = RΨ⁺ + Ψ⁺ᵀRᵀ − Ψ⁺ᵀ(ΨᵀR)Ψ⁺`, of rank ≤ 8.
pub fn conservative_correction(
    k: &DMatrix<f64>,
    nu: &[f64],
    basis: &NullBasis,
    grid: &VelocityGrid,
) -> Result<(DMatrix<f64>, CorrectionReport)> {
    let n = grid.len();
    let mut residuals_before = [0.0; 4];
    for i in 0..4 {
        let psi = DVector::from_column_slice(&basis.psi[i]);
        let kpsi = k * &psi;
        let res: Vec<f64> = (0..n).map(|a| nu[a] * psi[a] - kpsi[a]).collect();
        residuals_before[i] = grid.norm(&res) / grid.norm(&basis.psi[i]);
    }
    let worst = residuals_before.iter().cloned().fold(0.0, f64::max);
    if !(worst <= ASSEMBLY_SANITY_BOUND) {
        return Err(MilneError::AssemblyQuality(format!(
            "relative null-space residuals {residuals_before:?} exceed {ASSEMBLY_SANITY_BOUND}; refine the grid"
        )));
    }
    let sw: Vec<f64> = grid.weights.iter().map(|w| w.sqrt()).collect();
    let m = to_symmetric(k, &grid.weights);
    let m = (&m + m.transpose()) * 0.5;
    let psi = DMatrix::from_fn(n, 4, |a, i| sw[a] * basis.psi[i][a]);
    let dpsi = DMatrix::from_fn(n, 4, |a, i| nu[a] * psi[(a, i)]);
    let r = dpsi - &m * &psi;
    let gram = psi.transpose() * &psi;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| MilneError::OperatorAssembly("null basis Gram matrix is singular".into()))?;
    let pinv = &gram_inv * psi.transpose(); // 4×n
    let ptr = psi.transpose() * &r;
    let ptr = (&ptr + ptr.transpose()) * 0.5;
    let rp = &r * &pinv;
    let delta = &rp + rp.transpose() - pinv.transpose() * ptr * &pinv;
    let delta_norm = delta.norm();
    let m2 = &m + &delta;
    let m2 = (&m2 + m2.transpose()) * 0.5;
    let k2 = from_symmetric(&m2, &grid.weights);
    let mut after: f64 = 0.0;
    for i in 0..4 {
        let p = DVector::from_column_slice(&basis.psi[i]);
        let kp = &k2 * &p;
        for a in 0..n {
            after = after.max((nu[a] * p[a] - kp[a]).abs());
        }
    }
    Ok((k2, CorrectionReport { residuals_before, residual_after: after, delta_norm }))
}

/// Spectral-gap estimate on the orthogonal complement of the null space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Smallest generalized eigenvalue of `⟨w, Lw⟩ = λ ‖√ν w‖²` on `N^⊥`.
    pub eigen: f64,
    /// Smallest Rayleigh quotient over the random trials.
    pub rayleigh_min: f64,
    /// Number of random trials.
    pub trials: usize,
    /// Seed of the trial generator.
    pub seed: u64,
}

/// Fitted bounds `ν₀ ≤ ν(v)/(1+|v|) ≤ ν₁` over the grid nodes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NuBounds {
    /// Lower constant.
    pub nu0: f64,
    /// Upper constant.
    pub nu1: f64,
}

/// Result of decomposing a field into fluid and non-fluid parts.
#[derive(Clone, Debug)]
pub struct NullProjection {
    /// Coefficients `qᵢ = ⟨ψᵢ, f⟩`.
    pub q: [f64; 4],
    /// Fluid part `Σ qᵢψᵢ`.
    pub kernel: Vec<f64>,
    /// Remainder `w = f − Σ qᵢψᵢ`.
    pub remainder: Vec<f64>,
}

/// The assembled and corrected operator.
#[derive(Clone, Debug)]
pub struct CollisionOperator {
    /// Velocity grid the operator lives on.
    pub grid: VelocityGrid,
    /// Kernel normalization.
    pub q0: f64,
    /// Collision frequency per node.
    pub nu: Vec<f64>,
    /// Gain matrix in nodal form (weights folded in).
    pub k: DMatrix<f64>,
    /// Fluid null basis.
    pub basis: NullBasis,
    /// Correction diagnostics.
    pub correction: CorrectionReport,
    /// Fitted `ν` bounds.
    pub nu_bounds: NuBounds,
}

impl CollisionOperator {
    /// Assembles the operator; `q0 = None` selects the `ν(1) = 1` calibration.
    pub fn build(grid: &VelocityGrid, q0: Option<f64>) -> Result<Self> {
        let q0 = q0.unwrap_or_else(|| calibrate_q0(grid));
        let nu = collision_frequency(grid, q0)?;
        let raw = assemble_k(grid, q0)?;
        let basis = NullBasis::new(grid);
        let (k, correction) = conservative_correction(&raw, &nu, &basis, grid)?;
        let ratios = grid.nodes.iter().zip(&nu).map(|(v, n)| n / (1.0 + v.speed()));
        let (mut nu0, mut nu1) = (f64::INFINITY, 0.0f64);
        for r in ratios {
            nu0 = nu0.min(r);
            nu1 = nu1.max(r);
        }
        Ok(Self { grid: grid.clone(), q0, nu, k, basis, correction, nu_bounds: NuBounds { nu0, nu1 } })
    }

    /// Number of velocity nodes.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    /// Whether the operator is empty (never for a built operator).
    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `ν` at an arbitrary speed (same quadrature as the nodal values).
    pub fn collision_frequency_at(&self, r: f64) -> f64 {
        collision_frequency_radial(&self.grid, self.q0, r)
    }

    /// `K f`.
    pub fn apply_k(&self, f: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(f);
        (&self.k * v).as_slice().to_vec()
    }

    /// `L f = ν f − K f`.
    pub fn apply_l(&self, f: &[f64]) -> Vec<f64> {
        let kf = self.apply_k(f);
        f.iter().zip(&self.nu).zip(kf).map(|((f, n), k)| n * f - k).collect()
    }

    /// Splits `f` into its fluid coefficients, fluid part and remainder.
    pub fn project_null(&self, f: &[f64]) -> NullProjection {
        let q: [f64; 4] = std::array::from_fn(|i| self.grid.inner(&self.basis.psi[i], f));
        let kernel: Vec<f64> = (0..f.len())
            .map(|a| (0..4).map(|i| q[i] * self.basis.psi[i][a]).sum())
            .collect();
        let remainder = f.iter().zip(&kernel).map(|(a, b)| a - b).collect();
        NullProjection { q, kernel, remainder }
    }

    /// Spectral gap: the smallest `λ` with `⟨w, Lw⟩ ≥ λ‖√ν w‖²` on `N^⊥`
    /// from a generalized symmetric eigen-solve, plus the minimum Rayleigh
    /// quotient over `trials` seeded random fields.
    pub fn rayleigh_gap(&self, trials: usize, seed: u64) -> Result<GapEstimate> {
        if trials < 10 {
            return Err(MilneError::Parameter(format!("rayleigh_gap needs at least 10 trials, got {trials}")));
        }
        let n = self.len();
        let w = &self.grid.weights;
        let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
        let m = to_symmetric(&self.k, w);
        let m = (&m + m.transpose()) * 0.5;
        // Orthonormal basis of span(W^{1/2}ψ) via QR.
        let psi = DMatrix::from_fn(n, 4, |a, i| sw[a] * self.basis.psi[i][a]);
        let q = psi.qr().q();
        let proj = DMatrix::<f64>::identity(n, n) - &q * q.transpose();
        let mut s = -m;
        for a in 0..n {
            s[(a, a)] += self.nu[a];
        }
        let alpha = 10.0 * self.nu.iter().cloned().fold(0.0, f64::max);
        let qqt = &q * q.transpose();
        let a_mat = &proj * &s * &proj + &qqt * alpha;
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.nu));
        let b_mat = &proj * d * &proj + &qqt;
        let b_mat = (&b_mat + b_mat.transpose()) * 0.5;
        let chol = b_mat
            .cholesky()
            .ok_or_else(|| MilneError::OperatorAssembly("projected ν-form is not positive definite".into()))?;
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::<f64>::identity(n, n))
            .ok_or_else(|| MilneError::OperatorAssembly("singular Cholesky factor".into()))?;
        let c = &linv * a_mat * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let eigen = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rayleigh_min = f64::INFINITY;
        let mu_half: Vec<f64> = self.grid.map(|v| maxwellian(v).sqrt());
        for _ in 0..trials {
            let f: Vec<f64> = mu_half
                .iter()
                .map(|s| s.powf(0.5) * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            let p = self.project_null(&f);
            let wv = p.remainder;
            let lw = self.apply_l(&wv);
            let num = self.grid.inner(&wv, &lw);
            let den: f64 = wv.iter().zip(&self.nu).zip(w).map(|((x, n), wt)| n * x * x * wt).sum();
            if den > 0.0 {
                rayleigh_min = rayleigh_min.min(num / den);
            }
        }
        if !(eigen > 0.0) {
            return Err(MilneError::OperatorAssembly(format!("nonpositive spectral gap {eigen}")));
        }
        Ok(GapEstimate { eigen, rayleigh_min, trials, seed })
    }

    /// Kernel density `k(v_a, u_b) = K_ab / W_b`.
    pub fn kernel_density(&self, a: usize, b: usize) -> f64 {
        self.k[(a, b)] / self.grid.weights[b]
    }

    /// Cache key `(v_max, n_rings, n_theta, q0)`.
    pub fn cache_key(&self) -> CacheKey {
        CacheKey { v_max: self.grid.v_max, n_rings: self.grid.n_rings(), n_theta: self.grid.n_theta, q0: self.q0 }
    }

    /// Writes the operator (nodes, weights, ν, K) as a little-endian binary dump.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(16 * self.len() * self.len());
        buf.extend_from_slice(CACHE_MAGIC);
        let key = self.cache_key();
        buf.extend_from_slice(&key.v_max.to_le_bytes());
        buf.extend_from_slice(&(key.n_rings as u64).to_le_bytes());
        buf.extend_from_slice(&(key.n_theta as u64).to_le_bytes());
        buf.extend_from_slice(&key.q0.to_le_bytes());
        let n = self.len();
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        for k in 0..n {
            for x in [self.grid.nodes[k].v_eta, self.grid.nodes[k].v_phi, self.grid.weights[k], self.nu[k]] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        for a in 0..n {
            for b in 0..n {
                buf.extend_from_slice(&self.k[(a, b)].to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Loads an operator dump, refusing it unless its key matches `expected`
    /// and its node list matches the grid built from that key.
    pub fn load_cache(path: &Path, expected: &CacheKey) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |len: usize| -> Result<&[u8]> {
            if pos + len > bytes.len() {
                return Err(MilneError::Io("truncated operator cache".into()));
            }
            let s = &bytes[pos..pos + len];
            pos += len;
            Ok(s)
        };
        if take(8)? != CACHE_MAGIC {
            return Err(MilneError::Io("not an operator cache file".into()));
        }
        let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().expect("8 bytes"));
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().expect("8 bytes"));
        let key = CacheKey {
            v_max: f64_at(take(8)?),
            n_rings: u64_at(take(8)?) as usize,
            n_theta: u64_at(take(8)?) as usize,
            q0: f64_at(take(8)?),
        };
        if !key.matches(expected) {
            return Err(MilneError::Config(format!(
                "operator cache key {key:?} does not match the configuration {expected:?}"
            )));
        }
        let grid = crate::velocity_grid::build_grid(key.v_max, key.n_rings, key.n_theta)?;
        let n = u64_at(take(8)?) as usize;
        if n != grid.len() {
            return Err(MilneError::Config("operator cache node count mismatch".into()));
        }
        let mut nu = vec![0.0; n];
        for (k, slot) in nu.iter_mut().enumerate() {
            let ve = f64_at(take(8)?);
            let vp = f64_at(take(8)?);
            let wt = f64_at(take(8)?);
            *slot = f64_at(take(8)?);
            let node = grid.nodes[k];
            if ve != node.v_eta || vp != node.v_phi || wt != grid.weights[k] {
                return Err(MilneError::Config("operator cache nodes differ from the configured grid".into()));
            }
        }
        let mut k = DMatrix::<f64>::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                k[(a, b)] = f64_at(take(8)?);
            }
        }
        let basis = NullBasis::new(&grid);
        let mut after: f64 = 0.0;
        for i in 0..4 {
            let p = DVector::from_column_slice(&basis.psi[i]);
            let kp = &k * &p;
            for a in 0..n {
                after = after.max((nu[a] * p[a] - kp[a]).abs());
            }
        }
        let ratios = grid.nodes.iter().zip(&nu).map(|(v, x)| x / (1.0 + v.speed()));
        let (mut nu0, mut nu1) = (f64::INFINITY, 0.0f64);
        for r in ratios {
            nu0 = nu0.min(r);
            nu1 = nu1.max(r);
        }
        Ok(Self {
            grid,
            q0: key.q0,
            nu,
            k,
            basis,
            correction: CorrectionReport { residuals_before: [f64::NAN; 4], residual_after: after, delta_norm: f64::NAN },
            nu_bounds: NuBounds { nu0, nu1 },
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"MILNEOP1";

/// Identity of a cached operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    /// Truncation radius.
    pub v_max: f64,
    /// Ring count.
    pub n_rings: usize,
    /// Angles per ring.
    pub n_theta: usize,
    /// Kernel normalization.
    pub q0: f64,
}

impl CacheKey {
    /// Exact match on the grid parameters and `q0` to 1e−12 relative.
    pub fn matches(&self, other: &CacheKey) -> bool {
        self.v_max == other.v_max
            && self.n_rings == other.n_rings
            && self.n_theta == other.n_theta
            && (self.q0 - other.q0).abs() <= 1e-12 * self.q0.abs()
    }
}

/// Fit of the kernel against the hard-sphere envelope
/// `(|v−u| + 1/|v−u|)·exp(−|v−u|²/8 − (|v|²−|u|²)²/(8|v−u|²))`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeFit {
    /// Smallest constant bounding every sampled pair.
    pub c_fit: f64,
    /// Number of sampled pairs.
    pub pairs: usize,
}

/// Envelope function of the hard-sphere kernel bound.
pub fn grad_envelope(v: Velocity, u: Velocity) -> f64 {
    let d = Velocity::new(v.v_eta - u.v_eta, v.v_phi - u.v_phi).speed();
    let ds = v.speed_sq() - u.speed_sq();
    (d + 1.0 / d) * (-(d * d) / 8.0 - ds * ds / (8.0 * d * d)).exp()
}

/// Envelope resolved at the grid scale: the maximum of [`grad_envelope`] over
/// the interpolation cell of node `b` (one ring and one angle step either
/// side), sampled on a 7×7 lattice.
///
/// The discrete kernel spreads each collision partner over the bilinear cell
/// that contains it, so the pointwise envelope is not a meaningful bound at
/// pairs where it varies faster than the grid spacing.
pub fn cell_envelope(grid: &VelocityGrid, a: usize, b: usize) -> f64 {
    let i = grid.ring_of(b);
    let j = grid.angle_of(b);
    let r_lo = if i == 0 { 0.0 } else { grid.rings[i - 1] };
    let r_hi = if i + 1 == grid.n_rings() { grid.v_max } else { grid.rings[i + 1] };
    let mut env: f64 = 0.0;
    for p in 0..=6 {
        let r = r_lo + (r_hi - r_lo) * p as f64 / 6.0;
        for q in 0..=6 {
            let t = grid.thetas[j] + grid.dtheta() * (q as f64 / 3.0 - 1.0);
            let e = grad_envelope(grid.nodes[a], Velocity::from_polar(r, t));
            if e.is_finite() {
                env = env.max(e);
            }
        }
    }
    env
}

/// Fits the envelope constant over every `stride`-th off-diagonal pair,
/// using the cell-resolved envelope [`cell_envelope`].
pub fn fit_envelope(op: &CollisionOperator, stride: usize) -> EnvelopeFit {
    let n = op.len();
    let stride = stride.max(1);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .step_by(stride)
        .collect();
    let (c, count) = pairs
        .par_iter()
        .map(|&(a, b)| {
            let env = cell_envelope(&op.grid, a, b);
            if env > 0.0 {
                (op.kernel_density(a, b).abs() / env, 1usize)
            } else {
                (0.0, 0)
            }
        })
        .reduce(|| (0.0, 0), |x, y| (x.0.max(y.0), x.1 + y.1));
    EnvelopeFit { c_fit: c, pairs: count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity_grid::build_grid;
    use std::sync::OnceLock;

    fn op() -> &'static CollisionOperator {
        static OP: OnceLock<CollisionOperator> = OnceLock::new();
        OP.get_or_init(|| CollisionOperator::build(&build_grid(8.0, 16, 32).unwrap(), None).unwrap())
    }

    #[test]
    fn calibration_sets_unit_frequency() {
        let o = op();
        assert!((o.collision_frequency_at(1.0) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn frequency_is_ring_constant_and_positive() {
        let o = op();
        assert!(o.nu.iter().all(|&x| x > 0.0));
        for i in 0..o.grid.n_rings() {
            let base = o.nu[o.grid.index(i, 0)];
            for j in 0..o.grid.n_theta {
                assert_eq!(o.nu[o.grid.index(i, j)], base);
            }
        }
        assert!(collision_frequency(&o.grid, -1.0).is_err());
    }

    #[test]
    fn null_space_is_exact_after_correction() {
        let o = op();
        assert!(o.correction.residual_after <= 1e-12, "{}", o.correction.residual_after);
        for i in 0..4 {
            let l = o.apply_l(&o.basis.psi[i]);
            assert!(l.iter().all(|x| x.abs() <= 1e-12));
        }
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let o = op();
        assert!(o.apply_k(&vec![0.0; o.len()]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn projection_of_scaled_mode() {
        let o = op();
        let f: Vec<f64> = o.basis.psi[1].iter().map(|x| 2.0 * x).collect();
        let p = o.project_null(&f);
        assert!((p.q[1] - 2.0).abs() < 1e-10);
        assert!(p.q[0].abs() < 1e-12 && p.q[2].abs() < 1e-12 && p.q[3].abs() < 1e-12);
        assert!(p.remainder.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn gap_is_positive_and_bounded_by_trials() {
        let o = op();
        let g = o.rayleigh_gap(20, 7).unwrap();
        assert!(g.eigen > 0.0);
        assert!(g.rayleigh_min >= g.eigen - 1e-10);
        assert!(o.rayleigh_gap(5, 7).is_err());
    }

    #[test]
    fn cache_round_trip_and_key_mismatch() {
        let o = op();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("op.bin");
        o.save_cache(&path).unwrap();
        let back = CollisionOperator::load_cache(&path, &o.cache_key()).unwrap();
        assert_eq!(back.k, o.k);
        assert_eq!(back.nu, o.nu);
        let mut wrong = o.cache_key();
        wrong.n_theta = 48;
        assert!(matches!(CollisionOperator::load_cache(&path, &wrong), Err(MilneError::Config(_))));
    }
}
