//! Restarted GMRES with modified Gram–Schmidt and Givens rotations.
//!
//! All reductions are sequential so results are independent of the thread
//! count.

/// Outcome of a GMRES solve.
#[derive(Clone, Debug)]
pub struct GmresResult {
    /// Approximate solution.
    pub x: Vec<f64>,
    /// Number of operator applications.
    pub matvecs: usize,
    /// Relative residual `‖b − Ax‖/‖b‖` estimates after each restart cycle.
    pub history: Vec<f64>,
    /// Whether the target was met.
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` from `x = 0` with restart length `restart`, stopping at
/// relative residual `rel_tol` or after `max_matvecs` applications.
pub fn gmres<F: FnMut(&[f64]) -> Vec<f64>>(
    mut apply: F,
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_matvecs: usize,
) -> GmresResult {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    let mut history = Vec::new();
    if b_norm == 0.0 {
        return GmresResult { x, matvecs: 0, history: vec![0.0], converged: true };
    }
    let target = rel_tol * b_norm;
    let mut matvecs = 0usize;
    let mut r: Vec<f64> = b.to_vec();
    loop {
        let beta = norm(&r);
        history.push(beta / b_norm);
        if beta <= target {
            return GmresResult { x, matvecs, history, converged: true };
        }
        if matvecs >= max_matvecs {
            return GmresResult { x, matvecs, history, converged: false };
        }
        let m = restart.min(max_matvecs - matvecs).max(1);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut s = vec![0.0; m + 1];
        s[0] = beta;
        let mut used = 0;
        for j in 0..m {
            let mut w = apply(&basis[j]);
            matvecs += 1;
            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(&w, vi);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
            let wn = norm(&w);
            h[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if d == 0.0 {
                used = j;
                break;
            }
            cs[j] = h[j][j] / d;
            sn[j] = h[j + 1][j] / d;
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            s[j + 1] = -sn[j] * s[j];
            s[j] *= cs[j];
            used = j + 1;
            if s[j + 1].abs() <= target || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // Back substitution for the Krylov coefficients.
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut acc = s[i];
            for k in i + 1..used {
                acc -= h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xk, vk) in x.iter_mut().zip(&basis[i]) {
                *xk += yi * vk;
            }
        }
        // True residual for the next cycle.
        let ax = apply(&x);
        matvecs += 1;
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        if used == 0 {
            let rn = norm(&r);
            history.push(rn / b_norm);
            return GmresResult { x, matvecs, history, converged: rn <= target };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_system() {
        let n = 40;
        let a = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut v = 3.0 * x[i];
                    if i > 0 {
                        v -= x[i - 1];
                    }
                    if i + 1 < n {
                        v -= 0.5 * x[i + 1];
                    }
                    v
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let res = gmres(a, &b, 1e-12, 10, 500);
        assert!(res.converged);
        let r = a(&res.x);
        let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn zero_rhs_needs_no_work() {
        let res = gmres(|x: &[f64]| x.to_vec(), &[0.0; 5], 1e-12, 5, 10);
        assert!(res.converged && res.matvecs == 0);
        assert!(res.x.iter().all(|&v| v == 0.0));
    }
}
