//! The geometric correction: cutoffs `Υ`, `Υ₀`, the force
//! `G(ε; η) = −ε Υ(√ε η)/(1 − εη)` and the potential `W` with `W′ = −G`,
//! `W(0) = 0`.
//!
//! The cutoffs are only pinned on their plateaus; on the transition interval
//! we use the reversed quintic smoothstep `1 − s(t)`, `s(t) = 6t⁵ − 15t⁴ + 10t³`
//! (a C² bridge). `Υ` has knees `½` and `¾`, `Υ₀` has knees `¼` and `½`.
//!
//! The potential is `−ln(1 − εη)` on the uncut region `√ε η ≤ ½`, is tabulated
//! with exact derivatives (cubic Hermite) across the transition, and is the
//! stored constant `W(∞)` beyond `√ε η ≥ ¾`.

use crate::error::{MilneError, Result};
use crate::quadrature::{adaptive, gauss_legendre_on};
use serde::{Deserialize, Serialize};

/// Lower and upper knees of `Υ`.
pub const UPSILON_KNEES: (f64, f64) = (0.5, 0.75);
/// Lower and upper knees of `Υ₀`.
pub const UPSILON0_KNEES: (f64, f64) = (0.25, 0.5);

/// Textual description of the cutoff bridge, reported with every result.
pub const BRIDGE_DESCRIPTION: &str =
    "reversed quintic smoothstep 1 - (6t^5 - 15t^4 + 10t^3) on the transition interval (C^2 bridge)";

fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

fn bridge(z: f64, lo: f64, hi: f64) -> f64 {
    if z <= lo {
        1.0
    } else if z >= hi {
        0.0
    } else {
        1.0 - smoothstep5((z - lo) / (hi - lo))
    }
}

/// Cutoff `Υ(z)`: one for `z ≤ ½`, zero for `z ≥ ¾`.
pub fn upsilon(z: f64) -> f64 {
    bridge(z, UPSILON_KNEES.0, UPSILON_KNEES.1)
}

/// Cutoff `Υ₀(z)`: one for `z ≤ ¼`, zero for `z ≥ ½`.
pub fn upsilon0(z: f64) -> f64 {
    bridge(z, UPSILON0_KNEES.0, UPSILON0_KNEES.1)
}

/// Whether the curvature force is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceMode {
    /// `G` as defined above.
    Geometric,
    /// `G ≡ 0`, `W ≡ 0` (the classical Milne problem).
    Classical,
}

impl std::fmt::Display for ForceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForceMode::Geometric => write!(f, "geometric"),
            ForceMode::Classical => write!(f, "classical"),
        }
    }
}

impl std::str::FromStr for ForceMode {
    type Err = MilneError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(ForceMode::Geometric),
            "classical" => Ok(ForceMode::Classical),
            other => Err(MilneError::Config(format!(
                "mode must be 'geometric' or 'classical', got '{other}'"
            ))),
        }
    }
}

const TABLE_INTERVALS: usize = 2048;

/// Force field at one Knudsen number.
#[derive(Clone, Debug)]
pub struct ForceField {
    epsilon: f64,
    mode: ForceMode,
    eta1: f64,
    eta2: f64,
    w1: f64,
    w_inf: f64,
    /// Hermite table of `W` across the transition `[eta1, eta2]`.
    table_w: Vec<f64>,
    table_dw: Vec<f64>,
}

impl ForceField {
    /// Builds the field; requires `0 < ε ≤ ¼`.
    pub fn new(epsilon: f64, mode: ForceMode) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0 && epsilon <= 0.25) {
            return Err(MilneError::Parameter(format!(
                "epsilon must lie in (0, 1/4], got {epsilon}"
            )));
        }
        let s = epsilon.sqrt();
        let eta1 = UPSILON_KNEES.0 / s;
        let eta2 = UPSILON_KNEES.1 / s;
        let mut field = Self {
            epsilon,
            mode,
            eta1,
            eta2,
            w1: 0.0,
            w_inf: 0.0,
            table_w: Vec::new(),
            table_dw: Vec::new(),
        };
        if mode == ForceMode::Geometric {
            field.w1 = -(-epsilon * eta1).ln_1p();
            let h = (eta2 - eta1) / TABLE_INTERVALS as f64;
            let mut w = Vec::with_capacity(TABLE_INTERVALS + 1);
            let mut dw = Vec::with_capacity(TABLE_INTERVALS + 1);
            let mut acc = field.w1;
            w.push(acc);
            dw.push(-field.force_exact(eta1));
            for i in 0..TABLE_INTERVALS {
                let a = eta1 + h * i as f64;
                let b = if i + 1 == TABLE_INTERVALS { eta2 } else { a + h };
                let (xs, ws) = gauss_legendre_on(10, a, b);
                acc += xs.iter().zip(&ws).map(|(&x, &wt)| -wt * field.force_exact(x)).sum::<f64>();
                w.push(acc);
                dw.push(-field.force_exact(b));
            }
            field.w_inf = acc;
            field.table_w = w;
            field.table_dw = dw;
        }
        Ok(field)
    }

    /// Knudsen number.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Mode.
    pub fn mode(&self) -> ForceMode {
        self.mode
    }

    /// Whether the force vanishes identically.
    pub fn is_classical(&self) -> bool {
        self.mode == ForceMode::Classical
    }

    /// Knees `(½/√ε, ¾/√ε)` in η: end of the uncut region and start of the
    /// force-free region.
    pub fn knees(&self) -> (f64, f64) {
        (self.eta1, self.eta2)
    }

    /// `W(∞)` (zero in classical mode).
    pub fn w_infinity(&self) -> f64 {
        self.w_inf
    }

    fn force_exact(&self, eta: f64) -> f64 {
        let e = self.epsilon;
        let u = upsilon(e.sqrt() * eta);
        if u == 0.0 {
            0.0
        } else {
            -e * u / (1.0 - e * eta)
        }
    }

    /// Force `G(η) ≤ 0`.
    pub fn force(&self, eta: f64) -> f64 {
        match self.mode {
            ForceMode::Classical => 0.0,
            ForceMode::Geometric => self.force_exact(eta.max(0.0)),
        }
    }

    /// Potential `W(η)`.
    pub fn potential(&self, eta: f64) -> f64 {
        if self.mode == ForceMode::Classical || eta <= 0.0 {
            return 0.0;
        }
        if eta <= self.eta1 {
            return -(-self.epsilon * eta).ln_1p();
        }
        if eta >= self.eta2 {
            return self.w_inf;
        }
        let h = (self.eta2 - self.eta1) / TABLE_INTERVALS as f64;
        let x = (eta - self.eta1) / h;
        let i = (x.floor() as usize).min(TABLE_INTERVALS - 1);
        let t = x - i as f64;
        let (y0, y1) = (self.table_w[i], self.table_w[i + 1]);
        let (d0, d1) = (self.table_dw[i] * h, self.table_dw[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1
    }

    /// `exp(W(η))`, i.e. `1/(1 − εη)` on the uncut region.
    pub fn exp_potential(&self, eta: f64) -> f64 {
        if self.mode == ForceMode::Geometric && eta > 0.0 && eta <= self.eta1 {
            1.0 / (1.0 - self.epsilon * eta)
        } else {
            self.potential(eta).exp()
        }
    }

    /// Smallest `η ≥ 0` with `W(η) = w` for `0 ≤ w ≤ W(∞)`; `None` when
    /// `w > W(∞)` (the level is never reached).
    pub fn inverse_potential(&self, w: f64) -> Option<f64> {
        if w <= 0.0 {
            return Some(0.0);
        }
        if self.mode == ForceMode::Classical || w > self.w_inf {
            return None;
        }
        if w <= self.w1 {
            return Some(-(-w).exp_m1() / self.epsilon);
        }
        if w == self.w_inf {
            // Reached exactly where the force switches off.
            let mut lo = self.eta1;
            let mut hi = self.eta2;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if self.potential(mid) >= w {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        // Safeguarded Newton on the monotone table.
        let (mut lo, mut hi) = (self.eta1, self.eta2);
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.potential(x) - w;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = -self.force(x);
            let mut next = if d > 0.0 { x - f / d } else { 0.5 * (lo + hi) };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * x.max(1.0) || hi - lo <= 1e-15 * x.max(1.0) {
                x = next;
                break;
            }
            x = next;
        }
        Some(x)
    }
}

/// Numerical check of the structural properties of the force/potential pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForceLemmaReport {
    /// Knudsen number.
    pub epsilon: f64,
    /// `min W` over the sampled η (must be ≥ 0).
    pub w_min: f64,
    /// `max W` (must be ≤ 1).
    pub w_max: f64,
    /// Whether `W` is non-decreasing on the sample.
    pub w_monotone: bool,
    /// `W(∞)`.
    pub w_infinity: f64,
    /// Uncut-construction bound `−ln(1 − ¾√ε)` on `W(∞)`.
    pub w_infinity_bound: f64,
    /// `∫ (e^{−W} − e^{−W(∞)})²`.
    pub int_exp_gap_sq: f64,
    /// `∫ G²`.
    pub int_g_sq: f64,
    /// Bound `−ε ln(1 − ¾√ε)` on `∫ G²`.
    pub int_g_sq_bound: f64,
    /// `∫₀^∞ ∫_η^∞ G²(y) dy dη = ∫ y G²(y) dy`.
    pub int_tail_g_sq: f64,
    /// The cutoff bridge used.
    pub bridge: String,
}

/// Verifies the five properties of the force lemma at one ε:
/// `0 ≤ W ≤ 1` and increasing; `W(∞)` below its uncut bound; the three
/// integrals finite. The ε → 0 limit is checked by [`check_force_ladder`].
pub fn check_force_lemma(field: &ForceField) -> Result<ForceLemmaReport> {
    if field.is_classical() {
        return Ok(ForceLemmaReport {
            epsilon: field.epsilon,
            w_min: 0.0,
            w_max: 0.0,
            w_monotone: true,
            w_infinity: 0.0,
            w_infinity_bound: 0.0,
            int_exp_gap_sq: 0.0,
            int_g_sq: 0.0,
            int_g_sq_bound: 0.0,
            int_tail_g_sq: 0.0,
            bridge: BRIDGE_DESCRIPTION.to_string(),
        });
    }
    let (eta1, eta2) = field.knees();
    let samples = 4000;
    let mut w_min = f64::INFINITY;
    let mut w_max = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut prev = -1.0;
    for i in 0..=samples {
        let eta = 1.5 * eta2 * i as f64 / samples as f64;
        let w = field.potential(eta);
        w_min = w_min.min(w);
        w_max = w_max.max(w);
        if w < prev - 1e-15 {
            monotone = false;
        }
        prev = w;
    }
    let eps = field.epsilon;
    let w_inf = field.w_infinity();
    let e_inf = (-w_inf).exp();
    let tol = 1e-13;
    let pieces = [(0.0, eta1), (eta1, eta2)];
    let mut int_exp = 0.0;
    let mut int_g2 = 0.0;
    let mut int_yg2 = 0.0;
    for &(a, b) in &pieces {
        int_exp += adaptive(|y| ((-field.potential(y)).exp() - e_inf).powi(2), a, b, tol, 0.0);
        int_g2 += adaptive(|y| field.force(y).powi(2), a, b, tol, 0.0);
        int_yg2 += adaptive(|y| y * field.force(y).powi(2), a, b, tol, 0.0);
    }
    let report = ForceLemmaReport {
        epsilon: eps,
        w_min,
        w_max,
        w_monotone: monotone,
        w_infinity: w_inf,
        w_infinity_bound: -(-0.75 * eps.sqrt()).ln_1p(),
        int_exp_gap_sq: int_exp,
        int_g_sq: int_g2,
        int_g_sq_bound: -eps * (-0.75 * eps.sqrt()).ln_1p(),
        int_tail_g_sq: int_yg2,
        bridge: BRIDGE_DESCRIPTION.to_string(),
    };
    let mut violations = Vec::new();
    if report.w_min < 0.0 || report.w_max > 1.0 {
        violations.push(format!("0 <= W <= 1 fails (range [{}, {}])", report.w_min, report.w_max));
    }
    if !report.w_monotone {
        violations.push("W is not non-decreasing".to_string());
    }
    if report.w_infinity > report.w_infinity_bound {
        violations.push(format!(
            "W(inf) = {} exceeds -ln(1 - 3/4 sqrt(eps)) = {}",
            report.w_infinity, report.w_infinity_bound
        ));
    }
    for (name, v) in [
        ("int (e^-W - e^-W(inf))^2", report.int_exp_gap_sq),
        ("int G^2", report.int_g_sq),
        ("int int G^2", report.int_tail_g_sq),
    ] {
        if !v.is_finite() {
            violations.push(format!("{name} is not finite"));
        }
    }
    if report.int_g_sq > report.int_g_sq_bound {
        violations.push(format!(
            "int G^2 = {} exceeds -eps ln(1 - 3/4 sqrt(eps)) = {}",
            report.int_g_sq, report.int_g_sq_bound
        ));
    }
    if violations.is_empty() {
        Ok(report)
    } else {
        Err(MilneError::ForceConstruction(violations.join("; ")))
    }
}

/// Runs [`check_force_lemma`] over a ladder of ε values (any order) and
/// verifies that `W(∞)` strictly decreases as ε decreases.
pub fn check_force_ladder(epsilons: &[f64]) -> Result<Vec<ForceLemmaReport>> {
    let mut reports = Vec::with_capacity(epsilons.len());
    for &e in epsilons {
        reports.push(check_force_lemma(&ForceField::new(e, ForceMode::Geometric)?)?);
    }
    let mut sorted: Vec<&ForceLemmaReport> = reports.iter().collect();
    sorted.sort_by(|a, b| b.epsilon.partial_cmp(&a.epsilon).expect("finite epsilon"));
    for pair in sorted.windows(2) {
        if pair[1].w_infinity >= pair[0].w_infinity {
            return Err(MilneError::ForceConstruction(format!(
                "W(inf) does not decrease from eps = {} to eps = {}",
                pair[0].epsilon, pair[1].epsilon
            )));
        }
    }
    Ok(reports)
}
