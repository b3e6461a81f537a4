//! Dense strictly convex QP by the dual active-set method of Goldfarb and
//! Idnani. Problems here have at most a few dozen rows, so the projected
//! operators are rebuilt from scratch whenever the active set changes.

use nalgebra::{DMatrix, DVector};

use crate::prelude::*;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `A_eq x = b_eq` in the convention
    /// `G x + a + A_eq^T y_eq + A_in^T y_in = 0`.
    pub eq_multipliers: DVector<f64>,
    /// Multipliers of `A_in x <= b_in`, nonnegative.
    pub ineq_multipliers: DVector<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
struct Active {
    row: usize,
    is_eq: bool,
    /// `+1` when the row enters as `n^T x >= b` with `n = -A_i`, `-1` for an
    /// equality added from the other side.
    orient: f64,
}

/// Minimizes `1/2 x^T G x + a^T x` subject to `A_eq x = b_eq` and
/// `A_in x <= b_in`. `G` must be symmetric positive definite.
pub fn solve_qp(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Result<QpSolution> {
    let n = g.nrows();
    let me = a_eq.nrows();
    let mi = a_in.nrows();
    let ginv = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("QP Hessian is not positive definite".to_string()))?
        .inverse();

    // Constraint `k` in ">=" form: normal n_k, right-hand side b_k.
    let normal = |k: usize| -> (DVector<f64>, f64) {
        if k < me {
            (a_eq.row(k).transpose(), b_eq[k])
        } else {
            (-a_in.row(k - me).transpose(), -b_in[k - me])
        }
    };
    let scale = |k: usize| -> f64 {
        let (nk, bk) = normal(k);
        1.0 + nk.amax() + bk.abs()
    };

    let mut x = -(&ginv * a);
    let mut active: Vec<Active> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut skipped_eq = vec![false; me];
    let tol = 1e-11;
    let max_steps = 50 * (n + me + mi + 1);
    let mut steps = 0;

    loop {
        // Choose the next violated constraint, equalities first.
        let mut pick: Option<(usize, f64)> = None;
        for k in 0..me {
            if skipped_eq[k] || active.iter().any(|c| c.row == k) {
                continue;
            }
            let (nk, bk) = normal(k);
            let s = nk.dot(&x) - bk;
            pick = Some((k, if s > 0.0 { -1.0 } else { 1.0 }));
            break;
        }
        if pick.is_none() {
            let mut worst = 0.0;
            for k in me..me + mi {
                if active.iter().any(|c| c.row == k) {
                    continue;
                }
                let (nk, bk) = normal(k);
                let s = (nk.dot(&x) - bk) / scale(k);
                if s < -tol && s < worst {
                    worst = s;
                    pick = Some((k, 1.0));
                }
            }
        }
        let Some((p, orient)) = pick else { break };
        let (np0, bp0) = normal(p);
        let np = &np0 * orient;
        let bp = bp0 * orient;
        let mut u_plus = u.clone();
        u_plus.push(0.0);

        loop {
            steps += 1;
            if steps > max_steps {
                return Err(Error::NoConvergence("QP active-set cycling".to_string()));
            }
            let (z, r) = directions(&ginv, &active, &normal, &np)?;
            let sp = np.dot(&x) - bp;
            let zn = z.dot(&np);
            let z_zero = z.amax() <= 1e-13 * (1.0 + np.amax());

            if p < me && sp.abs() <= tol * scale(p) && z_zero {
                // Redundant consistent equality.
                skipped_eq[p] = true;
                break;
            }

            // Partial step: largest step keeping active inequality multipliers >= 0.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, c) in active.iter().enumerate() {
                if !c.is_eq && r[j] > 0.0 {
                    let ratio = u_plus[j] / r[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            // Full step: makes constraint p active.
            let t2 = if z_zero || zn <= 0.0 { f64::INFINITY } else { -sp / zn };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible("QP constraints are inconsistent".to_string()));
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for j in 0..active.len() {
                u_plus[j] -= t * r[j];
            }
            let q = active.len();
            u_plus[q] += t;

            if t2 <= t1 {
                active.push(Active {
                    row: p,
                    is_eq: p < me,
                    orient,
                });
                u = u_plus;
                break;
            }
            let j = drop.expect("partial step without a blocking constraint");
            active.remove(j);
            u_plus.remove(j);
        }
    }

    let mut eq_mult = DVector::zeros(me);
    let mut in_mult = DVector::zeros(mi);
    for (c, uj) in active.iter().zip(&u) {
        // Lagrangian in ">=" form: G x + a - n u = 0. With n = A_eq row for
        // equalities and n = -A_in row for inequalities.
        if c.is_eq {
            eq_mult[c.row] = -uj * c.orient;
        } else {
            in_mult[c.row - me] = *uj;
        }
    }
    let objective = 0.5 * x.dot(&(g * &x)) + a.dot(&x);
    Ok(QpSolution {
        x,
        eq_multipliers: eq_mult,
        ineq_multipliers: in_mult,
        objective,
    })
}

/// Primal step direction `z = H n` and dual direction `r = N* n` for the
/// current active set.
fn directions(
    ginv: &DMatrix<f64>,
    active: &[Active],
    normal: &impl Fn(usize) -> (DVector<f64>, f64),
    np: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = ginv.nrows();
    let q = active.len();
    if q == 0 {
        return Ok((ginv * np, DVector::zeros(0)));
    }
    let mut nmat = DMatrix::zeros(n, q);
    for (j, c) in active.iter().enumerate() {
        let (nk, _) = normal(c.row);
        nmat.set_column(j, &(nk * c.orient));
    }
    let gn = ginv * &nmat;
    let m = nmat.transpose() * &gn;
    let minv = m
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| m.try_inverse())
        .ok_or_else(|| Error::Singular("dependent active constraints in QP".to_string()))?;
    let nstar = &minv * gn.transpose();
    let r = &nstar * np;
    let z = ginv * np - &gn * &r;
    Ok((z, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    }

    #[test]
    fn unconstrained_minimum() {
        let g = DMatrix::identity(2, 2) * 2.0;
        let a = DVector::from_vec(vec![-2.0, -4.0]);
        let (ae, be) = empty(2);
        let s = solve_qp(&g, &a, &ae, &be, &ae, &be).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-14 && (s.x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn inequality_and_equality_multipliers() {
        // min x^2 + y^2 s.t. x + y = 2, x <= 0.5
        let g = DMatrix::identity(2, 2) * 2.0;
        let a = DVector::zeros(2);
        let ae = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let be = DVector::from_vec(vec![2.0]);
        let ai = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let bi = DVector::from_vec(vec![0.5]);
        let s = solve_qp(&g, &a, &ae, &be, &ai, &bi).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-12 && (s.x[1] - 1.5).abs() < 1e-12);
        // Stationarity: G x + a + A_eq^T y + A_in^T z = 0.
        let res = &g * &s.x + &a + ae.transpose() * &s.eq_multipliers + ai.transpose() * &s.ineq_multipliers;
        assert!(res.amax() < 1e-12);
        assert!(s.ineq_multipliers[0] > 0.0);
    }

    #[test]
    fn inconsistent_constraints_are_reported() {
        let g = DMatrix::identity(1, 1);
        let a = DVector::zeros(1);
        let (ae, be) = empty(1);
        let ai = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let bi = DVector::from_vec(vec![-1.0, -1.0]);
        assert!(matches!(
            solve_qp(&g, &a, &ae, &be, &ai, &bi),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let g = DMatrix::identity(2, 2);
        let a = DVector::zeros(2);
        let ae = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let be = DVector::from_vec(vec![1.0, 2.0]);
        let (ai, bi) = empty(2);
        let s = solve_qp(&g, &a, &ae, &be, &ai, &bi).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-12 && (s.x[1] - 0.5).abs() < 1e-12);
    }
}
