//! Characteristic sweeps on a fixed η grid.
//!
//! The unknowns of the collided problem are cell averages `Ḡ[c][v]`. Given
//! the cell means `Q̄ = K Ḡ + S̄` of the right-hand side, a sweep
//! reconstructs `Q` linearly inside each cell and integrates
//! `dg/ds = Q − ν g` exactly along every characteristic segment:
//!
//! * upward nodes march from the wall through levels `1..=N`, the foot of
//!   each segment sitting on the previous level at the transported velocity;
//! * at the far wall downward values are the specular images of the upward
//!   ones (an exact grid map);
//! * downward nodes march back through levels `N−1..=0`; when the
//!   characteristic turns inside the cell above, the segment is replaced by
//!   the two symmetric legs through the turning point, starting from the
//!   specular image node on the same level.
//!
//! Foot values of `g` are interpolated with one-sided cubics on the half
//! ring (so values never mix across the grazing set) and foot values of `Q`
//! with periodic cubics. The uncollided part is evaluated separately and
//! exactly from the wall data.
//!
//! Cell averages are taken at fixed velocity. Without force they coincide
//! with the averages along the (straight) characteristics. With force, a
//! characteristic drifts in angle across a cell, so the averages are
//! instead recovered from the exact cell balance at fixed `v`,
//!
//! ```text
//! ν ḡ = Q̄ − v_eta (g_top − g_bottom)/Δη + Ḡ v_phi ∂_θ ḡ,
//! ```
//!
//! (the force term is `−G v_phi ∂_θ` in polar velocity coordinates) with a
//! skew centred difference that is exact on the first angular harmonic.
//! Summed against `√μ` this reproduces the flux law `q₁′ = −G q₁` cell by
//! cell, because `K` conserves mass on the grid.

use crate::characteristics::{eta_plus_of, invariants, travel_time, PathState};
use crate::collision::CollisionOperator;
use crate::error::{MilneError, Result};
use crate::geometry_force::ForceField;
use crate::velocity_grid::{Stencil4, Velocity};
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Coefficients of one characteristic segment with optical depth `x = ντ`.
///
/// With `Q` linear along the segment,
/// `g_out = decay·g_in + a_in·Q_in + a_out·Q_out` and the segment average is
/// `avg_g·g_in + b_in·Q_in + b_out·Q_out`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegCoef {
    /// `e^{−x}`.
    pub decay: f64,
    /// `τ·m₁(x)`.
    pub a_in: f64,
    /// `τ·(e₁(x) − m₁(x))`.
    pub a_out: f64,
    /// `e₁(x) = (1 − e^{−x})/x`.
    pub avg_g: f64,
    /// `τ·c_a(x)`.
    pub b_in: f64,
    /// `τ·c_b(x)`.
    pub b_out: f64,
}

impl SegCoef {
    /// Coefficients for collision frequency `nu` and travel time `tau`.
    pub fn new(nu: f64, tau: f64) -> Self {
        let x = nu * tau;
        let (e1, m1, ca, cb) = phi_functions(x);
        Self {
            decay: (-x).exp(),
            a_in: tau * m1,
            a_out: tau * (e1 - m1),
            avg_g: e1,
            b_in: tau * ca,
            b_out: tau * cb,
        }
    }
}

/// `(e₁, m₁, c_a, c_b)` at `x ≥ 0`, with series expansions for small `x`.
///
/// `e₁ = (1−e^{−x})/x`, `m₁ = (e₁ − e^{−x})/x`, `c_a = (½ − m₁)/x`,
/// `c_b = (1 − e₁)/x − c_a`.
pub fn phi_functions(x: f64) -> (f64, f64, f64, f64) {
    if x < 0.5 {
        let (mut e1, mut m1, mut ca, mut cb) = (0.0, 0.0, 0.0, 0.0);
        // term_k = (−x)^k / (k+3)!, built incrementally.
        let mut p = 1.0; // (−x)^k
        let mut f1 = 1.0; // (k+1)!
        let mut f2 = 2.0; // (k+2)!
        let mut f3 = 6.0; // (k+3)!
        for k in 0..24 {
            let kf = k as f64;
            e1 += p / f1;
            m1 += p * (kf + 1.0) / f2;
            ca += p * (kf + 2.0) / f3;
            cb += p / f3;
            p *= -x;
            f1 *= kf + 2.0;
            f2 *= kf + 3.0;
            f3 *= kf + 4.0;
        }
        (e1, m1, ca, cb)
    } else {
        let ex = (-x).exp();
        let e1 = -(-x).exp_m1() / x;
        let m1 = (e1 - ex) / x;
        let ca = (0.5 - m1) / x;
        let cb = (1.0 - e1) / x - ca;
        (e1, m1, ca, cb)
    }
}

/// How the value at one (level, node) pair is produced by the sweep.
#[derive(Clone, Copy, Debug)]
pub enum Step {
    /// Upward node on the wall: inflow data (zero for the collided part).
    Inflow,
    /// Downward node on the far wall: specular image of an upward node.
    Mirror {
        /// Angular index of the image.
        src: usize,
    },
    /// Regular segment from the neighbouring level on the same ring.
    Segment {
        /// One-sided stencil for `g` at the foot (angular indices).
        g_in: Stencil4,
        /// Periodic stencil for `Q` at the foot (angular indices).
        q_in: Stencil4,
        /// Segment coefficients.
        coef: SegCoef,
    },
    /// Two symmetric legs through a turning point inside the cell above.
    Turn {
        /// Angular index of the specular image on the same level.
        mirror: usize,
        /// Periodic stencil at the pole `θ = ±π/2`.
        pole: Stencil4,
        /// Position of the turning point inside the cell, in `[0, 1]`.
        lambda: f64,
        /// Coefficients of one leg.
        coef: SegCoef,
    },
}

/// Exact uncollided data of one characteristic.
#[derive(Clone, Copy, Debug)]
pub struct Uncollided {
    /// Velocity at the wall (upward branch).
    pub wall: Velocity,
    /// Optical depth from the wall to the node.
    pub depth: f64,
    /// Factor turning `h(wall)` into the average over the node's segment.
    pub avg_factor: f64,
}

/// Precomputed sweep geometry of one slab.
#[derive(Clone, Debug)]
pub struct SlabGeometry {
    /// η levels.
    pub eta: Vec<f64>,
    /// Velocity nodes per level.
    pub n_v: usize,
    n_theta: usize,
    n_rings: usize,
    /// Steps indexed `level·n_v + node`.
    steps: Vec<Step>,
    /// Uncollided data indexed `level·n_v + node`.
    unc: Vec<Uncollided>,
    /// Number of downward nodes whose characteristic turns inside the slab.
    pub turning_nodes: usize,
    /// Cell means of `G` (empty without force).
    g_bar: Vec<f64>,
    /// Collision frequency per node.
    nu: Vec<f64>,
    /// Velocity nodes.
    vel: Vec<Velocity>,
}

impl SlabGeometry {
    /// Classifies every (level, node) pair and precomputes its segment.
    pub fn new(op: &CollisionOperator, field: &ForceField, eta: &[f64]) -> Result<Self> {
        let grid = &op.grid;
        if eta.len() < 2 || eta[0] != 0.0 || eta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MilneError::Parameter("eta grid must start at 0 and increase".into()));
        }
        let n_levels = eta.len();
        let n_cells = n_levels - 1;
        let length = eta[n_cells];
        let n_v = grid.len();
        let n_theta = grid.n_theta;
        let per_ring: Vec<(Vec<Step>, Vec<Uncollided>, usize)> = (0..grid.n_rings())
            .into_par_iter()
            .map(|ring| {
                let mut steps = Vec::with_capacity(n_levels * n_theta);
                let mut unc = Vec::with_capacity(n_levels * n_theta);
                let mut turning = 0usize;
                for k in 0..n_levels {
                    for j in 0..n_theta {
                        let node = grid.index(ring, j);
                        let v = grid.nodes[node];
                        let nu = op.nu[node];
                        let state = PathState::new(eta[k], v);
                        let inv = invariants(field, state);
                        let wall = Velocity::new((inv.e - inv.c2 * inv.c2).max(0.0).sqrt(), inv.c2);
                        let t0 = travel_time(field, inv, 0.0, eta[k]);
                        let foot_phi = |level: usize| inv.c2 * field.exp_potential(eta[level]);
                        if grid.is_upward(j) {
                            let depth = nu * t0;
                            if k == 0 {
                                steps.push(Step::Inflow);
                                unc.push(Uncollided { wall, depth: 0.0, avg_factor: 0.0 });
                                continue;
                            }
                            let tau = travel_time(field, inv, eta[k - 1], eta[k]);
                            let coef = SegCoef::new(nu, tau);
                            let phi = foot_phi(k - 1);
                            let ve = (inv.e - phi * phi).max(0.0).sqrt();
                            let theta = phi.atan2(ve);
                            steps.push(Step::Segment {
                                g_in: grid.half_ring_cubic(theta, true),
                                q_in: grid.periodic_cubic(theta),
                                coef,
                            });
                            unc.push(Uncollided {
                                wall,
                                depth,
                                avg_factor: (-(depth - nu * tau)).exp() * coef.avg_g,
                            });
                        } else {
                            let turn = eta_plus_of(field, inv).map(|t| t.max(eta[k]));
                            let far = match turn {
                                Some(t) if t < length => t,
                                _ => length,
                            };
                            let depth = nu * (2.0 * travel_time(field, inv, 0.0, far) - t0);
                            if k == n_cells {
                                steps.push(Step::Mirror { src: grid.mirror_angle(j) });
                                unc.push(Uncollided { wall, depth, avg_factor: 0.0 });
                                continue;
                            }
                            match turn {
                                Some(tp) if tp < eta[k + 1] => {
                                    turning += 1;
                                    let tau = travel_time(field, inv, eta[k], tp);
                                    let coef = SegCoef::new(nu, tau);
                                    let pole = if inv.c2 > 0.0 { 0.5 * PI } else { 1.5 * PI };
                                    steps.push(Step::Turn {
                                        mirror: grid.mirror_angle(j),
                                        pole: grid.periodic_cubic(pole),
                                        lambda: ((tp - eta[k]) / (eta[k + 1] - eta[k])).clamp(0.0, 1.0),
                                        coef,
                                    });
                                    unc.push(Uncollided {
                                        wall,
                                        depth,
                                        avg_factor: (-(depth - nu * tau)).exp() * coef.avg_g,
                                    });
                                }
                                _ => {
                                    let tau = travel_time(field, inv, eta[k], eta[k + 1]);
                                    let coef = SegCoef::new(nu, tau);
                                    let phi = foot_phi(k + 1);
                                    let ve = -(inv.e - phi * phi).max(0.0).sqrt();
                                    let theta = phi.atan2(ve);
                                    steps.push(Step::Segment {
                                        g_in: grid.half_ring_cubic(theta, false),
                                        q_in: grid.periodic_cubic(theta),
                                        coef,
                                    });
                                    unc.push(Uncollided {
                                        wall,
                                        depth,
                                        avg_factor: (-(depth - nu * tau)).exp() * coef.avg_g,
                                    });
                                }
                            }
                        }
                    }
                }
                (steps, unc, turning)
            })
            .collect();
        let mut steps = vec![Step::Inflow; n_levels * n_v];
        let mut unc = vec![Uncollided { wall: Velocity::new(0.0, 0.0), depth: 0.0, avg_factor: 0.0 }; n_levels * n_v];
        let mut turning_nodes = 0;
        for (ring, (s, u, t)) in per_ring.into_iter().enumerate() {
            turning_nodes += t;
            for k in 0..n_levels {
                for j in 0..n_theta {
                    steps[k * n_v + ring * n_theta + j] = s[k * n_theta + j];
                    unc[k * n_v + ring * n_theta + j] = u[k * n_theta + j];
                }
            }
        }
        let g_bar = if field.is_classical() {
            Vec::new()
        } else {
            eta.windows(2).map(|w| -(field.potential(w[1]) - field.potential(w[0])) / (w[1] - w[0])).collect()
        };
        Ok(Self {
            eta: eta.to_vec(),
            n_v,
            n_theta,
            n_rings: grid.n_rings(),
            steps,
            unc,
            turning_nodes,
            g_bar,
            nu: op.nu.clone(),
            vel: grid.nodes.clone(),
        })
    }

    /// Number of cells.
    pub fn n_cells(&self) -> usize {
        self.eta.len() - 1
    }

    /// Step of a (level, node) pair.
    pub fn step(&self, level: usize, node: usize) -> &Step {
        &self.steps[level * self.n_v + node]
    }

    /// Uncollided data of a (level, node) pair.
    pub fn uncollided(&self, level: usize, node: usize) -> &Uncollided {
        &self.unc[level * self.n_v + node]
    }

    /// Linear reconstruction of cell means: returns `(Q̃_lo, Q̃_hi, slope)`.
    ///
    /// Slopes are the derivative at the cell midpoint of the parabola
    /// through the neighbouring means (one-sided at the ends), so constants
    /// and linear profiles are reproduced and every reconstruction keeps its
    /// cell mean.
    pub fn reconstruct(&self, q_bar: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_cells();
        let mids: Vec<f64> = self.eta.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths: Vec<f64> = self.eta.windows(2).map(|w| w[1] - w[0]).collect();
        let mut lo = q_bar.clone();
        let mut hi = q_bar.clone();
        let mut slope = DMatrix::zeros(self.n_v, n);
        if n >= 2 {
            for c in 0..n {
                let (a, b) = if c == 0 {
                    (0, 1)
                } else if c == n - 1 {
                    (n - 2, n - 1)
                } else {
                    (c - 1, c + 1)
                };
                for v in 0..self.n_v {
                    let s = if a + 1 == b {
                        (q_bar[(v, b)] - q_bar[(v, a)]) / (mids[b] - mids[a])
                    } else {
                        let (x0, x1, x2) = (mids[a], mids[c], mids[b]);
                        let (y0, y1, y2) = (q_bar[(v, a)], q_bar[(v, c)], q_bar[(v, b)]);
                        y0 * (x1 - x2) / ((x0 - x1) * (x0 - x2))
                            + y1 * (2.0 * x1 - x0 - x2) / ((x1 - x0) * (x1 - x2))
                            + y2 * (x1 - x0) / ((x2 - x0) * (x2 - x1))
                    };
                    slope[(v, c)] = s;
                    lo[(v, c)] = q_bar[(v, c)] - 0.5 * widths[c] * s;
                    hi[(v, c)] = q_bar[(v, c)] + 0.5 * widths[c] * s;
                }
            }
        }
        (lo, hi, slope)
    }

    /// Sweeps with zero inflow data and cell sources `q_bar`.
    ///
    /// Returns nodal values `(n_v × (N+1))` and cell averages `(n_v × N)`.
    pub fn sweep(&self, q_bar: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        self.sweep_inflow(q_bar, None)
    }

    /// Sweeps with cell sources `q_bar` and inflow values `inflow` (one per
    /// velocity node; only the upward entries are used).
    pub fn sweep_inflow(&self, q_bar: &DMatrix<f64>, inflow: Option<&[f64]>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (lo, hi, _) = self.reconstruct(q_bar);
        self.sweep_reconstructed(&lo, &hi, inflow)
    }

    /// Sweep with an explicit reconstruction and optional inflow values.
    pub fn sweep_reconstructed(
        &self,
        lo: &DMatrix<f64>,
        hi: &DMatrix<f64>,
        inflow: Option<&[f64]>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n_levels = self.eta.len();
        let n_cells = n_levels - 1;
        let nt = self.n_theta;
        let n_v = self.n_v;
        let lo_s = lo.as_slice();
        let hi_s = hi.as_slice();
        let rings: Vec<(Vec<f64>, Vec<f64>)> = (0..self.n_rings)
            .into_par_iter()
            .map(|ring| {
                let base = ring * nt;
                let mut g = vec![0.0; n_levels * nt];
                let mut avg = vec![0.0; n_cells * nt];
                let up: Vec<usize> = (0..nt).filter(|&j| is_up(j, nt)).collect();
                let down: Vec<usize> = (0..nt).filter(|&j| !is_up(j, nt)).collect();
                let q_at = |m: &[f64], cell: usize, j: usize| m[cell * n_v + base + j];
                let q_st = |m: &[f64], cell: usize, st: &Stencil4| st.apply(m, cell * n_v + base);
                if let Some(h) = inflow {
                    for &j in &up {
                        g[j] = h[base + j];
                    }
                }
                for k in 1..n_levels {
                    let c = k - 1;
                    for &j in &up {
                        if let Step::Segment { g_in, q_in, coef } = &self.steps[k * n_v + base + j] {
                            let gi = g_in.apply(&g, c * nt);
                            let qi = q_st(lo_s, c, q_in);
                            let qo = q_at(hi_s, c, j);
                            g[k * nt + j] = coef.decay * gi + coef.a_in * qi + coef.a_out * qo;
                            avg[c * nt + j] = coef.avg_g * gi + coef.b_in * qi + coef.b_out * qo;
                        }
                    }
                }
                for k in (0..n_levels).rev() {
                    for &j in &down {
                        match &self.steps[k * n_v + base + j] {
                            Step::Mirror { src } => {
                                g[k * nt + j] = g[k * nt + src];
                            }
                            Step::Segment { g_in, q_in, coef } => {
                                let gi = g_in.apply(&g, (k + 1) * nt);
                                let qi = q_st(hi_s, k, q_in);
                                let qo = q_at(lo_s, k, j);
                                g[k * nt + j] = coef.decay * gi + coef.a_in * qi + coef.a_out * qo;
                                avg[k * nt + j] = coef.avg_g * gi + coef.b_in * qi + coef.b_out * qo;
                            }
                            Step::Turn { mirror, pole, lambda, coef } => {
                                let g0 = g[k * nt + mirror];
                                let q0 = q_at(lo_s, k, *mirror);
                                let qt = (1.0 - lambda) * q_st(lo_s, k, pole) + lambda * q_st(hi_s, k, pole);
                                let q1 = q_at(lo_s, k, j);
                                let gm = coef.decay * g0 + coef.a_in * q0 + coef.a_out * qt;
                                g[k * nt + j] = coef.decay * gm + coef.a_in * qt + coef.a_out * q1;
                                avg[k * nt + j] = coef.avg_g * gm + coef.b_in * qt + coef.b_out * q1;
                            }
                            Step::Inflow => {}
                        }
                    }
                }
                if !self.g_bar.is_empty() {
                    self.balance_averages(base, &g, lo_s, hi_s, &mut avg);
                }
                (g, avg)
            })
            .collect();
        let mut g = DMatrix::zeros(n_v, n_levels);
        let mut avg = DMatrix::zeros(n_v, n_cells);
        for (ring, (gr, ar)) in rings.into_iter().enumerate() {
            for k in 0..n_levels {
                for j in 0..nt {
                    g[(ring * nt + j, k)] = gr[k * nt + j];
                }
            }
            for c in 0..n_cells {
                for j in 0..nt {
                    avg[(ring * nt + j, c)] = ar[c * nt + j];
                }
            }
        }
        (g, avg)
    }

    /// Replaces the characteristic averages of one ring by the fixed-velocity
    /// averages solving the cell balance (see the module docs). The angular
    /// coupling is weak (`|Ḡ| r/ν` is small), so a fixed-point iteration
    /// started from the characteristic averages converges quickly.
    fn balance_averages(&self, base: usize, g: &[f64], lo: &[f64], hi: &[f64], avg: &mut [f64]) {
        let nt = self.n_theta;
        let n_v = self.n_v;
        let n_cells = self.eta.len() - 1;
        let two_sin = 2.0 * (2.0 * PI / nt as f64).sin();
        let mut rhs = vec![0.0; nt];
        let mut coup = vec![0.0; nt];
        let mut next = vec![0.0; nt];
        for c in 0..n_cells {
            let dx = self.eta[c + 1] - self.eta[c];
            let gb = self.g_bar[c];
            for j in 0..nt {
                let node = base + j;
                let v = self.vel[node];
                let nu = self.nu[node];
                let q_mean = 0.5 * (lo[c * n_v + node] + hi[c * n_v + node]);
                rhs[j] = (q_mean - v.v_eta * (g[(c + 1) * nt + j] - g[c * nt + j]) / dx) / nu;
                coup[j] = gb * v.v_phi / (nu * two_sin);
            }
            let cur = &mut avg[c * nt..(c + 1) * nt];
            for _ in 0..200 {
                let mut change = 0.0f64;
                let mut size = 0.0f64;
                for j in 0..nt {
                    let jp = (j + 1) % nt;
                    let jm = (j + nt - 1) % nt;
                    next[j] = rhs[j] + coup[j] * (cur[jp] - cur[jm]);
                    change = change.max((next[j] - cur[j]).abs());
                    size = size.max(next[j].abs());
                }
                cur.copy_from_slice(&next);
                if change <= 1e-15 * size {
                    break;
                }
            }
        }
    }

    /// Exact uncollided nodal values and cell averages for inflow data `h`.
    pub fn uncollided_fields<F: Fn(Velocity) -> f64 + Sync>(&self, h: F) -> (DMatrix<f64>, DMatrix<f64>) {
        let n_levels = self.eta.len();
        let n_cells = n_levels - 1;
        let n_v = self.n_v;
        let nt = self.n_theta;
        let hw: Vec<f64> = self.unc.par_iter().map(|u| h(u.wall)).collect();
        let mut g = DMatrix::zeros(n_v, n_levels);
        let mut avg = DMatrix::zeros(n_v, n_cells);
        for k in 0..n_levels {
            for node in 0..n_v {
                let i = k * n_v + node;
                let u = &self.unc[i];
                g[(node, k)] = hw[i] * (-u.depth).exp();
            }
        }
        for c in 0..n_cells {
            for node in 0..n_v {
                let head = if is_up(node % nt, nt) { c + 1 } else { c };
                let i = head * n_v + node;
                avg[(node, c)] = hw[i] * self.unc[i].avg_factor;
            }
        }
        (g, avg)
    }
}

#[inline]
fn is_up(j: usize, n: usize) -> bool {
    j < n / 4 || j >= 3 * n / 4
}
