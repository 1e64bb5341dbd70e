use super::{check_finite, LinearOperator};
use crate::error::Result;
use crate::exec::Execution;

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    /// Relative residual target `‖b - Ax‖ / ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
    pub exec: Execution,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            tol: 1e-8,
            max_iter: 100,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual estimate after each iteration, starting with 1.
    pub residual_history: Vec<f64>,
    pub final_relative_residual: f64,
}

/// Full right-preconditioned GMRES from a zero initial guess, using modified
/// Gram-Schmidt with a second pass when cancellation is detected.
pub fn gmres(
    a: &dyn LinearOperator,
    b: &[f64],
    m: &dyn LinearOperator,
    opts: &GmresOptions,
) -> Result<GmresOutcome> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    assert_eq!(m.dim(), n);
    let exec = opts.exec;
    check_finite(b, "right-hand side")?;
    let beta = exec.norm(b);
    if beta == 0.0 {
        return Ok(GmresOutcome {
            x: vec![0.0; n],
            iterations: 0,
            converged: true,
            residual_history: vec![0.0],
            final_relative_residual: 0.0,
        });
    }

    let k_max = opts.max_iter;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k_max + 1);
    basis.push(b.iter().map(|v| v / beta).collect());
    // Hessenberg columns after Givens rotation
    let mut r: Vec<Vec<f64>> = Vec::with_capacity(k_max);
    let mut cs: Vec<(f64, f64)> = Vec::with_capacity(k_max);
    let mut g = vec![beta];
    let mut history = vec![1.0];
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];

    let mut x = vec![0.0; n];
    let mut last_true = 1.0;
    for j in 0..k_max {
        m.apply(&basis[j], &mut z);
        a.apply(&z, &mut w);
        check_finite(&w, "Krylov vector")?;

        let mut h = vec![0.0; j + 2];
        let before = exec.norm(&w);
        for (i, v) in basis.iter().enumerate() {
            let c = exec.dot(&w, v);
            h[i] = c;
            axpy(-c, v, &mut w);
        }
        let mut after = exec.norm(&w);
        if after < 0.7 * before {
            for (i, v) in basis.iter().enumerate() {
                let c = exec.dot(&w, v);
                h[i] += c;
                axpy(-c, v, &mut w);
            }
            after = exec.norm(&w);
        }
        h[j + 1] = after;

        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a0, a1) = (h[i], h[i + 1]);
            h[i] = c * a0 + s * a1;
            h[i + 1] = -s * a0 + c * a1;
        }
        let (c, s) = givens(h[j], h[j + 1]);
        h[j] = c * h[j] + s * h[j + 1];
        h[j + 1] = 0.0;
        cs.push((c, s));
        let gj = g[j];
        g[j] = c * gj;
        g.push(-s * gj);
        h.truncate(j + 1);
        r.push(h);

        let estimate = g[j + 1].abs() / beta;
        if estimate.is_nan() {
            return Err(crate::error::SbmError::NotANumber("residual estimate"));
        }
        history.push(estimate);
        let breakdown = after <= f64::EPSILON * before.max(f64::MIN_POSITIVE);

        if estimate <= opts.tol || breakdown || j + 1 == k_max {
            x = assemble_solution(&basis, &r, &g, m, n);
            last_true = true_residual(a, b, &x, exec) / beta;
            if last_true <= opts.tol {
                return Ok(GmresOutcome {
                    x,
                    iterations: j + 1,
                    converged: true,
                    residual_history: history,
                    final_relative_residual: last_true,
                });
            }
            if breakdown {
                return Ok(GmresOutcome {
                    x,
                    iterations: j + 1,
                    converged: false,
                    residual_history: history,
                    final_relative_residual: last_true,
                });
            }
        }
        if j + 1 < k_max {
            let inv = 1.0 / after;
            basis.push(w.iter().map(|v| v * inv).collect());
        }
    }
    Ok(GmresOutcome {
        x,
        iterations: k_max,
        converged: false,
        residual_history: history,
        final_relative_residual: last_true,
    })
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

fn assemble_solution(
    basis: &[Vec<f64>],
    r: &[Vec<f64>],
    g: &[f64],
    m: &dyn LinearOperator,
    n: usize,
) -> Vec<f64> {
    let k = r.len();
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for (l, yl) in y.iter().enumerate().take(k).skip(i + 1) {
            s -= r[l][i] * yl;
        }
        y[i] = s / r[i][i];
    }
    let mut u = vec![0.0; n];
    for (v, &yi) in basis.iter().zip(&y) {
        axpy(yi, v, &mut u);
    }
    let mut x = vec![0.0; n];
    m.apply(&u, &mut x);
    x
}

fn true_residual(a: &dyn LinearOperator, b: &[f64], x: &[f64], exec: Execution) -> f64 {
    let mut ax = vec![0.0; b.len()];
    a.apply(x, &mut ax);
    for (v, bi) in ax.iter_mut().zip(b) {
        *v = bi - *v;
    }
    exec.norm(&ax)
}
