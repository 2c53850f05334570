//! One-dimensional quadrature rules shared by the grid, force and solver code.
//!
//! * [`gauss_legendre`] — classical Gauss–Legendre nodes/weights on `[-1, 1]`.
//! * [`gauss_radial_maxwell`] — Gauss rule for the weight `r·exp(−r²/2)` on
//!   `[0, r_max]`, built by a discretized Stieltjes (Lanczos) procedure.
//! * [`adaptive`] — adaptive Gauss–Kronrod (7/15) integration.

use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre order must be positive");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|t| half * t).collect(),
    )
}

/// Gauss rule for `∫₀^{r_max} f(r)·r·exp(−r²/2) dr` with `n` nodes.
///
/// Returns `(nodes, weights)` such that `Σ wᵢ f(rᵢ)` is exact for polynomials
/// `f` of degree `≤ 2n−1` (up to the accuracy of the underlying
/// discretization of the measure, which is resolved far below roundoff).
pub fn gauss_radial_maxwell(r_max: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    // Discretize the measure with a fine Gauss–Legendre rule, then run Lanczos
    // with full reorthogonalization to obtain the Jacobi matrix.
    let m = 600.max(20 * n);
    let (xs, ws) = gauss_legendre_on(m, 0.0, r_max);
    let mass: Vec<f64> = xs
        .iter()
        .zip(&ws)
        .map(|(&r, &w)| w * r * (-0.5 * r * r).exp())
        .collect();
    let total: f64 = mass.iter().sum();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    q.push(mass.iter().map(|&mk| (mk / total).sqrt()).collect());
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for j in 0..n {
        let qj = &q[j];
        let a: f64 = qj.iter().zip(&xs).map(|(v, x)| v * v * x).sum();
        alpha[j] = a;
        let mut r: Vec<f64> = qj.iter().zip(&xs).map(|(v, x)| (x - a) * v).collect();
        if j > 0 {
            let b = beta[j - 1];
            for (rk, pk) in r.iter_mut().zip(&q[j - 1]) {
                *rk -= b * pk;
            }
        }
        // Two passes of full reorthogonalization.
        for _ in 0..2 {
            for prev in &q {
                let dot: f64 = r.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (rk, pk) in r.iter_mut().zip(prev) {
                    *rk -= dot * pk;
                }
            }
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        beta[j] = norm;
        if j + 1 < n {
            q.push(r.iter().map(|v| v / norm).collect());
        }
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        jac[(j, j)] = alpha[j];
        if j + 1 < n {
            jac[(j, j + 1)] = beta[j];
            jac[(j + 1, j)] = beta[j];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], total * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    pairs.into_iter().unzip()
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WK[7];
    let mut g = fc * GK_WG[3];
    for i in 0..7 {
        let dx = h * GK_X[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Bisects until each panel's Kronrod/Gauss difference falls below its share
/// of `max(abs_tol, rel_tol·|I|)`; recursion depth is capped at 40.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (whole, err) = gk15(&f, a, b);
    let tol = abs_tol.max(rel_tol * whole.abs());
    if err <= tol {
        return whole;
    }
    let mut budget = MAX_SUBDIVISIONS;
    adaptive_rec(&f, a, b, tol, 0, &mut budget)
}

/// Bisections allowed per adaptive integral; near-singular integrands
/// return their best estimate once this is spent.
const MAX_SUBDIVISIONS: usize = 2000;

fn adaptive_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32, budget: &mut usize) -> f64 {
    let m = 0.5 * (a + b);
    let (l, el) = gk15(f, a, m);
    let (r, er) = gk15(f, m, b);
    if el + er <= tol || depth >= 40 || *budget == 0 {
        return l + r;
    }
    *budget -= 1;
    adaptive_rec(f, a, m, 0.5 * tol, depth + 1, budget) + adaptive_rec(f, m, b, 0.5 * tol, depth + 1, budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(7);
        for p in 0..14 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {p}: {q} vs {exact}");
        }
    }

    #[test]
    fn legendre_weights_sum_to_two() {
        for n in [1, 2, 5, 16, 40] {
            let (_, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn radial_maxwell_rule_reproduces_truncated_moments() {
        // ∫₀^R r^{2k+1} e^{-r²/2} dr has a closed form via the incomplete gamma
        // recursion I_k = -R^{2k} e^{-R²/2} + 2k I_{k-1}, I_0 = 1 - e^{-R²/2}.
        let r_max: f64 = 6.0;
        let (x, w) = gauss_radial_maxwell(r_max, 12);
        let tail = (-0.5 * r_max * r_max).exp();
        let mut exact = 1.0 - tail;
        for k in 0..10 {
            if k > 0 {
                exact = -r_max.powi(2 * k as i32) * tail + 2.0 * k as f64 * exact;
            }
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * k as i32)).sum();
            assert!((q - exact).abs() <= 1e-12 * exact.abs().max(1.0), "k={k}: {q} vs {exact}");
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity_after_substitution() {
        // ∫₀¹ 1/√(1−y) dy = 2 with y = 1 − s².
        let v = adaptive(|s: f64| 2.0 * s / (s * s).sqrt().max(1e-300), 0.0, 1.0, 1e-12, 0.0);
        assert!((v - 2.0).abs() < 1e-12);
        let v = adaptive(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13, 0.0);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
