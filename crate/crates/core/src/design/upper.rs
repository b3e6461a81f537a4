//! Box-constrained projected BFGS for the outer design variables.

use nalgebra::{DMatrix, DVector};

use crate::prelude::*;

#[derive(Debug, Clone, Copy)]
pub(crate) struct UpperOptions {
    pub step_tol: f64,
    pub copy_tol: f64,
    pub gradient_tol: f64,
    pub max_iterations: usize,
}

/// Value, gradient and lower-level copy variables at one outer point.
#[derive(Debug, Clone)]
pub(crate) struct UpperEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub copies: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct UpperResult {
    pub x: Vec<f64>,
    pub eval: UpperEval,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| (x[i] - (x[i] - g[i]).clamp(lo[i], hi[i])).abs())
        .fold(0.0, f64::max)
}

/// Minimizes over `lo <= x <= hi`. `f` returns `None` where the objective is
/// undefined; such points are rejected by the line search. Stops when both
/// the outer step and the copy variables move less than their tolerances,
/// or the projected gradient is small.
pub(crate) fn minimize_box(
    f: &mut dyn FnMut(&[f64]) -> Option<UpperEval>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &UpperOptions,
) -> Option<UpperResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut cur = f(&x)?;
    if !cur.value.is_finite() {
        return None;
    }
    let range = (0..n).map(|i| hi[i] - lo[i]).fold(0.0, f64::max).max(1e-12);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut first = true;
    let mut converged = false;
    let mut iterations = 0;
    let mut retried = false;

    for it in 0..opts.max_iterations {
        iterations = it;
        let pg = projected_gradient_norm(&x, &cur.grad, lo, hi);
        if pg <= opts.gradient_tol {
            converged = true;
            break;
        }
        let g = DVector::from_column_slice(&cur.grad);
        let width = 1e-10 * range;
        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lo[i] + width && g[i] > 0.0) || (x[i] >= hi[i] - width && g[i] < 0.0))
            .collect();
        let mut d = DVector::zeros(n);
        for i in 0..n {
            if active[i] {
                continue;
            }
            d[i] = -(0..n).filter(|j| !active[*j]).map(|j| h[(i, j)] * g[j]).sum::<f64>();
        }
        if g.dot(&d) >= 0.0 || d.iter().any(|v| !v.is_finite()) {
            h = DMatrix::identity(n, n);
            fresh = true;
            first = true;
            d = DVector::from_iterator(n, (0..n).map(|i| if active[i] { 0.0 } else { -g[i] }));
        }
        // Cap the step length; the first step moves at most 5% of the range.
        let cap = if first { 0.05 * range } else { 0.25 * range };
        let dmax = d.amax();
        if dmax > cap {
            d *= cap / dmax;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-10 {
            let mut trial: Vec<f64> = (0..n).map(|i| x[i] + alpha * d[i]).collect();
            project(&mut trial, lo, hi);
            let dec: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if let Some(e) = f(&trial) {
                if e.value.is_finite() && e.value <= cur.value + 1e-4 * dec + 1e-15 * cur.value.abs() {
                    accepted = Some((trial, e));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, e_new)) = accepted else {
            if fresh {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            first = true;
            continue;
        };

        let step = (0..n).map(|i| (x_new[i] - x[i]).abs()).fold(0.0, f64::max);
        let copy_move = if cur.copies.len() == e_new.copies.len() {
            cur.copies
                .iter()
                .zip(&e_new.copies)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };

        let s = DVector::from_iterator(n, (0..n).map(|i| x_new[i] - x[i]));
        let y = DVector::from_iterator(n, (0..n).map(|i| e_new.grad[i] - cur.grad[i]));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        x = x_new;
        cur = e_new;
        iterations = it + 1;

        if step <= opts.step_tol && copy_move <= opts.copy_tol {
            // One steepest-descent retry guards against a stalled quasi-Newton model.
            if fresh || retried {
                converged = true;
                break;
            }
            retried = true;
            h = DMatrix::identity(n, n);
            fresh = true;
            first = true;
        }
    }
    Some(UpperResult {
        x,
        eval: cur,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> UpperOptions {
        UpperOptions {
            step_tol: 1e-9,
            copy_tol: 1e-9,
            gradient_tol: 1e-8,
            max_iterations: 200,
        }
    }

    #[test]
    fn rosenbrock_with_active_bound() {
        // Unconstrained minimum (1, 1) is cut off by x0 <= 0.5.
        let mut f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            Some(UpperEval {
                value: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                grad: vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)],
                copies: Vec::new(),
            })
        };
        let r = minimize_box(&mut f, &[-1.0, 1.0], &[-2.0, -2.0], &[0.5, 2.0], &opts()).unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-8, "{:?}", r.x);
        assert!((r.x[1] - 0.25).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn undefined_region_is_avoided() {
        let mut f = |x: &[f64]| {
            if x[0] < 0.2 {
                return None;
            }
            Some(UpperEval {
                value: (x[0] - 0.3).powi(2),
                grad: vec![2.0 * (x[0] - 0.3)],
                copies: Vec::new(),
            })
        };
        let r = minimize_box(&mut f, &[5.0], &[0.0], &[10.0], &opts()).unwrap();
        assert!((r.x[0] - 0.3).abs() < 1e-6);
    }
}
