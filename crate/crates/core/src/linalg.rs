//! Thin helpers over `nalgebra` for the small dense symmetric matrices used
//! throughout (Fisher information, Lagrangian Hessians, KKT blocks).

use nalgebra::{DMatrix, DVector};

use crate::prelude::*;
use crate::{Error, Result};

/// Reciprocal condition estimate below which a symmetric matrix is treated as
/// singular.
pub const SINGULAR_RCOND: f64 = 1e-13;

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}

/// Largest eigenvalue and a unit eigenvector of a symmetric matrix.
pub fn max_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    (eig.eigenvalues[best], eig.eigenvectors.column(best).into_owned())
}

/// Inverse of a symmetric positive definite matrix, rejecting numerically
/// singular input.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let values = symmetric_eigenvalues(m);
    let max = values[n - 1];
    let min = values[0];
    if !(max > 0.0) || !(min > SINGULAR_RCOND * max) {
        return Err(Error::Singular(format!("eigenvalue range [{min:.3e}, {max:.3e}]")));
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("cholesky failed".to_string()))?;
    Ok(chol.inverse())
}

/// Solves a general square system, failing when it is numerically singular.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let lu = a.clone().full_piv_lu();
    // Full pivoting exposes rank loss on the diagonal of U.
    let u = lu.u();
    let min_pivot = (0..u.nrows().min(u.ncols()))
        .map(|i| u[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-12 * scale) {
        return Err(Error::Singular(format!(
            "pivot {min_pivot:.3e} relative to scale {scale:.3e}"
        )));
    }
    lu.solve(b).ok_or_else(|| Error::Singular("lu solve".to_string()))
}

/// `(x - c)^T M (x - c)`.
pub fn quadratic_form(m: &DMatrix<f64>, x: &[f64], center: &[f64]) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let di = x[i] - center[i];
        for j in 0..n {
            total += di * m[(i, j)] * (x[j] - center[j]);
        }
    }
    total
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
