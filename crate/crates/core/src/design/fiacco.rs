//! Parametric sensitivities of lower-level optima.
//!
//! For a solution `x*(theta)` with active constraints `h_A` and multipliers
//! `nu` (`L = f + nu^T h`), differentiating stationarity and the active
//! constraints gives
//!
//! ```text
//! [ H_xx L   A^T ] [ dx  ]     [ d/dtheta grad_x L ]
//! [ A        0   ] [ dnu ] = - [ d/dtheta h_A      ]
//! ```
//!
//! Second derivatives come from central differences of analytic gradients.

use nalgebra::DMatrix;

use crate::linalg;
use crate::nlp::{self, NlpProblem, NlpSolution, Tolerances};
use crate::prelude::*;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMethod {
    Kkt,
    /// Central differences of re-solved problems.
    Resolve,
}

#[derive(Debug, Clone)]
pub struct Sensitivity {
    /// `dx*/dtheta`, one column per parameter.
    pub dx: DMatrix<f64>,
    /// Multiplier sensitivities of the active set (equalities, active
    /// inequalities, active bounds), empty for [`SensitivityMethod::Resolve`].
    pub dnu: DMatrix<f64>,
    /// Total derivative of the optimal value.
    pub dvalue: Vec<f64>,
    pub active_ineq: Vec<usize>,
    pub active_bounds: Vec<usize>,
    pub method: SensitivityMethod,
}

fn param_step(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

/// `grad f + J_E^T nu_E + J_I^T nu_I`.
fn lagrangian_gradient<P: NlpProblem + ?Sized>(problem: &P, x: &[f64], nu_e: &[f64], nu_i: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    problem.gradient(x, &mut g);
    let mut je = DMatrix::zeros(problem.num_eq(), n);
    let mut ji = DMatrix::zeros(problem.num_ineq(), n);
    problem.constraint_jacobian(x, &mut je, &mut ji);
    for j in 0..n {
        g[j] += (0..nu_e.len()).map(|k| je[(k, j)] * nu_e[k]).sum::<f64>();
        g[j] += (0..nu_i.len()).map(|k| ji[(k, j)] * nu_i[k]).sum::<f64>();
    }
    g
}

fn constraint_values<P: NlpProblem + ?Sized>(problem: &P, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut eq = vec![0.0; problem.num_eq()];
    let mut ineq = vec![0.0; problem.num_ineq()];
    problem.constraints(x, &mut eq, &mut ineq);
    (eq, ineq)
}

/// Bounds that are active with a non-negligible multiplier.
fn active_bounds<P: NlpProblem + ?Sized>(problem: &P, sol: &NlpSolution, tol: &Tolerances) -> Vec<usize> {
    let b = problem.bounds();
    (0..sol.x.len())
        .filter(|&i| {
            let at = (sol.x[i] - b.lower[i]).abs() <= tol.active || (b.upper[i] - sol.x[i]).abs() <= tol.active;
            at && sol
                .bound_multipliers
                .get(i)
                .is_some_and(|z| z.abs() >= tol.weak_multiplier)
        })
        .collect()
}

/// Sensitivities of `sol` with respect to `params` from the linearized KKT
/// system. `build` maps parameters to the lower-level problem; it is
/// evaluated at `params` and at perturbed parameters for mixed derivatives.
pub fn fiacco_sensitivity<P, B>(build: B, params: &[f64], sol: &NlpSolution, tol: &Tolerances) -> Result<Sensitivity>
where
    P: NlpProblem,
    B: Fn(&[f64]) -> Result<P>,
{
    if !sol.is_converged() {
        return Err(Error::NoConvergence(
            "sensitivity needs a converged lower level".to_string(),
        ));
    }
    let problem = build(params)?;
    let n = problem.dimension();
    let m = params.len();
    let x = &sol.x;
    let active_ineq = sol.strongly_active(&problem, tol);
    let active_b = active_bounds(&problem, sol, tol);
    let me = problem.num_eq();
    let na = me + active_ineq.len() + active_b.len();
    if na > n {
        return Err(Error::Singular("more active constraints than variables".to_string()));
    }

    let nu_e = &sol.eq_multipliers;
    let nu_i = &sol.ineq_multipliers;

    // Hessian of the Lagrangian.
    let mut hess = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = nlp::fd_step(x[j]);
        probe[j] = x[j] + h;
        let gp = lagrangian_gradient(&problem, &probe, nu_e, nu_i);
        probe[j] = x[j] - h;
        let gm = lagrangian_gradient(&problem, &probe, nu_e, nu_i);
        probe[j] = x[j];
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;

    // Active-constraint Jacobian.
    let mut je = DMatrix::zeros(me, n);
    let mut ji = DMatrix::zeros(problem.num_ineq(), n);
    problem.constraint_jacobian(x, &mut je, &mut ji);
    let mut a = DMatrix::zeros(na, n);
    for r in 0..me {
        a.row_mut(r).copy_from(&je.row(r));
    }
    for (k, i) in active_ineq.iter().enumerate() {
        a.row_mut(me + k).copy_from(&ji.row(*i));
    }
    for (k, i) in active_b.iter().enumerate() {
        a[(me + active_ineq.len() + k, *i)] = 1.0;
    }

    // Mixed derivatives by central differences in the parameters.
    let mut rhs = DMatrix::zeros(n + na, m);
    let mut df = vec![0.0; m];
    let mut theta = params.to_vec();
    for k in 0..m {
        let h = param_step(params[k]);
        theta[k] = params[k] + h;
        let pp = build(&theta)?;
        theta[k] = params[k] - h;
        let pm = build(&theta)?;
        theta[k] = params[k];
        let gp = lagrangian_gradient(&pp, x, nu_e, nu_i);
        let gm = lagrangian_gradient(&pm, x, nu_e, nu_i);
        let (ep, ip) = constraint_values(&pp, x);
        let (em, im) = constraint_values(&pm, x);
        for i in 0..n {
            rhs[(i, k)] = -(gp[i] - gm[i]) / (2.0 * h);
        }
        for r in 0..me {
            rhs[(n + r, k)] = -(ep[r] - em[r]) / (2.0 * h);
        }
        for (q, i) in active_ineq.iter().enumerate() {
            rhs[(n + me + q, k)] = -(ip[*i] - im[*i]) / (2.0 * h);
        }
        df[k] = (pp.objective(x) - pm.objective(x)) / (2.0 * h);
    }

    let mut kkt = DMatrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
    kkt.view_mut((0, n), (n, na)).copy_from(&a.transpose());
    kkt.view_mut((n, 0), (na, n)).copy_from(&a);
    let sol_mat = linalg::solve(&kkt, &rhs)?;
    let dx = sol_mat.rows(0, n).into_owned();
    let dnu = sol_mat.rows(n, na).into_owned();

    let mut grad = vec![0.0; n];
    problem.gradient(x, &mut grad);
    let dvalue = (0..m)
        .map(|k| df[k] + (0..n).map(|i| grad[i] * dx[(i, k)]).sum::<f64>())
        .collect();
    Ok(Sensitivity {
        dx,
        dnu,
        dvalue,
        active_ineq,
        active_bounds: active_b,
        method: SensitivityMethod::Kkt,
    })
}

/// Sensitivities by re-solving the lower level at `params +- step e_k`,
/// warm-started from `sol`.
pub fn resolve_sensitivity<P, B>(
    build: B,
    params: &[f64],
    sol: &NlpSolution,
    tol: &Tolerances,
    step: f64,
) -> Result<Sensitivity>
where
    P: NlpProblem,
    B: Fn(&[f64]) -> Result<P>,
{
    let n = sol.x.len();
    let m = params.len();
    let mut dx = DMatrix::zeros(n, m);
    let mut dvalue = vec![0.0; m];
    // Differences of re-solved optima need tighter solves than the optima.
    let tight = Tolerances {
        optimality: tol.optimality.min(1e-13),
        feasibility: tol.feasibility.min(1e-13),
        ..*tol
    };
    let mut theta = params.to_vec();
    for k in 0..m {
        let mut side = |delta: f64| -> Result<NlpSolution> {
            theta[k] = params[k] + delta;
            let p = build(&theta);
            theta[k] = params[k];
            let s = nlp::solve_local(&p?, &sol.x, &tight)?;
            if !s.is_converged() && !(s.kkt_residual <= 1e-10 && s.constraint_violation <= 1e-10) {
                return Err(Error::NoConvergence("re-solved lower level".to_string()));
            }
            Ok(s)
        };
        let sp = side(step)?;
        let sm = side(-step)?;
        for i in 0..n {
            dx[(i, k)] = (sp.x[i] - sm.x[i]) / (2.0 * step);
        }
        dvalue[k] = (sp.objective - sm.objective) / (2.0 * step);
    }
    Ok(Sensitivity {
        dx,
        dnu: DMatrix::zeros(0, m),
        dvalue,
        active_ineq: Vec::new(),
        active_bounds: Vec::new(),
        method: SensitivityMethod::Resolve,
    })
}

/// [`fiacco_sensitivity`], falling back to [`resolve_sensitivity`] when the
/// KKT system is singular.
pub fn sensitivity<P, B>(build: B, params: &[f64], sol: &NlpSolution, tol: &Tolerances) -> Result<Sensitivity>
where
    P: NlpProblem,
    B: Fn(&[f64]) -> Result<P>,
{
    match fiacco_sensitivity(&build, params, sol, tol) {
        Err(Error::Singular(_)) => resolve_sensitivity(&build, params, sol, tol, 1e-5),
        r => r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{Bounds, Sense};

    /// `max -(x - theta)^2`, optimum `x = theta`.
    struct Track {
        theta: f64,
    }

    impl NlpProblem for Track {
        fn dimension(&self) -> usize {
            1
        }
        fn sense(&self) -> Sense {
            Sense::Maximize
        }
        fn bounds(&self) -> Bounds {
            Bounds::new(vec![-10.0], vec![10.0])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            -(x[0] - self.theta).powi(2)
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            g[0] = -2.0 * (x[0] - self.theta);
        }
        fn constraints(&self, _x: &[f64], _e: &mut [f64], _i: &mut [f64]) {}
    }

    /// `min x1 + x2` on the circle of radius `r`: `x* = -r/sqrt2 (1, 1)`.
    struct Circle {
        r: f64,
    }

    impl NlpProblem for Circle {
        fn dimension(&self) -> usize {
            2
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn bounds(&self) -> Bounds {
            Bounds::new(vec![-10.0; 2], vec![10.0; 2])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] + x[1]
        }
        fn gradient(&self, _x: &[f64], g: &mut [f64]) {
            g[0] = 1.0;
            g[1] = 1.0;
        }
        fn constraints(&self, x: &[f64], _e: &mut [f64], i: &mut [f64]) {
            i[0] = x[0] * x[0] + x[1] * x[1] - self.r * self.r;
        }
    }

    #[test]
    fn unconstrained_tracking() {
        let tol = Tolerances::default();
        let build = |t: &[f64]| Ok(Track { theta: t[0] });
        let sol = nlp::solve_local(&build(&[1.5]).unwrap(), &[0.0], &tol).unwrap();
        let s = fiacco_sensitivity(build, &[1.5], &sol, &tol).unwrap();
        assert!((s.dx[(0, 0)] - 1.0).abs() < 1e-8);
        assert!(s.dvalue[0].abs() < 1e-8);
    }

    #[test]
    fn independent_problem_has_zero_sensitivity() {
        let tol = Tolerances::default();
        let build = |_t: &[f64]| Ok(Circle { r: 2.0 });
        let sol = nlp::solve_local(&build(&[0.3]).unwrap(), &[0.5, 0.1], &tol).unwrap();
        let s = fiacco_sensitivity(build, &[0.3], &sol, &tol).unwrap();
        assert!(s.dx.amax() < 1e-9);
    }

    #[test]
    fn circle_matches_closed_form_and_resolve() {
        let tol = Tolerances::default();
        let build = |t: &[f64]| Ok(Circle { r: t[0] });
        let sol = nlp::solve_local(&build(&[2.0]).unwrap(), &[0.5, 0.1], &tol).unwrap();
        let s = fiacco_sensitivity(build, &[2.0], &sol, &tol).unwrap();
        let exact = -core::f64::consts::FRAC_1_SQRT_2;
        assert!((s.dx[(0, 0)] - exact).abs() < 1e-7, "{}", s.dx);
        assert!((s.dvalue[0] - 2.0 * exact).abs() < 1e-7);
        assert_eq!(s.active_ineq, vec![0]);
        let r = resolve_sensitivity(build, &[2.0], &sol, &tol, 1e-4).unwrap();
        assert!((r.dx[(1, 0)] - exact).abs() < 1e-6, "{}", r.dx);
    }
}
