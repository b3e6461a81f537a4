use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, QpSolution};
use super::{NlpProblem, NlpSolution, Status, Tolerances};
use crate::prelude::*;
use crate::{Error, Result};

/// Armijo slope fraction for the merit line search.
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;

/// Problem values at one iterate, in minimization form.
#[derive(Debug, Clone)]
struct Point {
    x: Vec<f64>,
    f: f64,
    g: DVector<f64>,
    ce: DVector<f64>,
    ci: DVector<f64>,
    je: DMatrix<f64>,
    ji: DMatrix<f64>,
}

impl Point {
    fn violation(&self) -> f64 {
        violation(&self.ce, &self.ci)
    }
}

fn violation(ce: &DVector<f64>, ci: &DVector<f64>) -> f64 {
    ce.iter().map(|v| v.abs()).sum::<f64>() + ci.iter().map(|v| v.max(0.0)).sum::<f64>()
}

fn max_violation(ce: &DVector<f64>, ci: &DVector<f64>) -> f64 {
    ce.iter()
        .map(|v| v.abs())
        .chain(ci.iter().map(|v| v.max(0.0)))
        .fold(0.0, f64::max)
}

struct Evaluator<'a, P: NlpProblem + ?Sized> {
    problem: &'a P,
    sign: f64,
    n: usize,
    me: usize,
    mi: usize,
}

impl<'a, P: NlpProblem + ?Sized> Evaluator<'a, P> {
    fn values(&self, x: &[f64]) -> (f64, DVector<f64>, DVector<f64>) {
        let f = self.sign * self.problem.objective(x);
        let mut ce = vec![0.0; self.me];
        let mut ci = vec![0.0; self.mi];
        self.problem.constraints(x, &mut ce, &mut ci);
        (f, DVector::from_vec(ce), DVector::from_vec(ci))
    }

    fn point(&self, x: Vec<f64>) -> Point {
        let (f, ce, ci) = self.values(&x);
        let mut g = vec![0.0; self.n];
        self.problem.gradient(&x, &mut g);
        let mut je = DMatrix::zeros(self.me, self.n);
        let mut ji = DMatrix::zeros(self.mi, self.n);
        self.problem.constraint_jacobian(&x, &mut je, &mut ji);
        Point {
            x,
            f,
            g: DVector::from_vec(g) * self.sign,
            ce,
            ci,
            je,
            ji,
        }
    }

    fn merit(&self, x: &[f64], rho: f64) -> f64 {
        let (f, ce, ci) = self.values(x);
        let m = f + rho * violation(&ce, &ci);
        if m.is_finite() {
            m
        } else {
            f64::INFINITY
        }
    }
}

/// QP step with multipliers split into constraint and bound parts.
#[derive(Debug)]
struct Step {
    d: DVector<f64>,
    lam_e: DVector<f64>,
    lam_i: DVector<f64>,
    /// Signed bound multipliers: positive at upper bounds.
    lam_b: DVector<f64>,
    /// l1 violation of the linearized constraints at `d`.
    lin_violation: f64,
}

/// Local SQP with a damped BFGS Hessian, an l1 merit line search and a
/// second-order correction against the Maratos effect.
pub fn solve_local<P: NlpProblem + ?Sized>(problem: &P, x0: &[f64], tol: &Tolerances) -> Result<NlpSolution> {
    let n = problem.dimension();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "start point",
            expected: n,
            found: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("start point"));
    }
    let bounds = problem.bounds();
    if !bounds.contains(x0) {
        return Err(Error::InvalidArgument("start point outside the box".to_string()));
    }
    let ev = Evaluator {
        problem,
        sign: problem.sense().sign(),
        n,
        me: problem.num_eq(),
        mi: problem.num_ineq(),
    };

    let mut pt = ev.point(x0.to_vec());
    if !pt.f.is_finite() || pt.g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the start point"));
    }
    let mut hess = DMatrix::<f64>::identity(n, n);
    let mut first_update = true;
    let mut rho = 1.0;
    let mut status = Status::MaxIterations;
    let mut last = None;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..tol.max_iterations {
        iterations = it;
        let step = match qp_step(&pt, &hess, &bounds, rho) {
            Ok(s) => s,
            Err(_) => {
                status = Status::Infeasible;
                break;
            }
        };

        kkt = kkt_residual(&pt, &step);
        let viol = max_violation(&pt.ce, &pt.ci);
        last = Some((step.lam_e.clone(), step.lam_i.clone(), step.lam_b.clone()));
        if kkt <= tol.optimality && viol <= tol.feasibility {
            status = Status::Converged;
            break;
        }

        let lam_max = step
            .lam_e
            .iter()
            .chain(step.lam_i.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if rho < 1.1 * lam_max {
            rho = 2.0 * lam_max + 1e-3;
        }

        let phi0 = pt.f + rho * pt.violation();
        let slope = pt.g.dot(&step.d) + rho * (step.lin_violation - pt.violation());
        let slack = 1e-14 * (1.0 + phi0.abs());

        let mut accepted: Option<Vec<f64>> = None;
        let full: Vec<f64> = pt.x.iter().zip(step.d.iter()).map(|(x, d)| x + d).collect();
        let mut full_proj = full.clone();
        bounds.project(&mut full_proj);
        if ev.merit(&full_proj, rho) <= phi0 + ARMIJO * slope + slack {
            accepted = Some(full_proj);
        } else if let Some(x_soc) = second_order_correction(&ev, &pt, &step, &full_proj, tol) {
            let mut x_soc = x_soc;
            bounds.project(&mut x_soc);
            if ev.merit(&x_soc, rho) <= phi0 + ARMIJO * slope + slack {
                accepted = Some(x_soc);
            }
        }
        if accepted.is_none() {
            let mut alpha = 0.5;
            while alpha >= MIN_STEP {
                let mut trial: Vec<f64> = pt.x.iter().zip(step.d.iter()).map(|(x, d)| x + alpha * d).collect();
                bounds.project(&mut trial);
                let phi = ev.merit(&trial, rho);
                if phi <= phi0 + ARMIJO * alpha * slope + slack {
                    accepted = Some(trial);
                    break;
                }
                // Quadratic interpolation, safeguarded to [0.1, 0.5].
                let denom = 2.0 * (phi - phi0 - alpha * slope);
                let next = if phi.is_finite() && denom > 0.0 {
                    (-slope * alpha * alpha / denom).clamp(0.1 * alpha, 0.5 * alpha)
                } else {
                    0.1 * alpha
                };
                alpha = next;
            }
        }
        let Some(x_new) = accepted else {
            status = Status::StepCollapse;
            break;
        };

        let new = ev.point(x_new);
        if !new.f.is_finite() || new.g.iter().any(|v| !v.is_finite()) {
            status = Status::StepCollapse;
            break;
        }
        let s = DVector::from_iterator(n, new.x.iter().zip(&pt.x).map(|(a, b)| a - b));
        let grad_l = |p: &Point| &p.g + p.je.transpose() * &step.lam_e + p.ji.transpose() * &step.lam_i;
        let y = grad_l(&new) - grad_l(&pt);
        damped_bfgs(&mut hess, &s, &y, &mut first_update);
        pt = new;
        iterations = it + 1;
    }

    let (lam_e, lam_i, lam_b) =
        last.unwrap_or_else(|| (DVector::zeros(ev.me), DVector::zeros(ev.mi), DVector::zeros(n)));
    let sign = ev.sign;
    Ok(NlpSolution {
        objective: sign * pt.f,
        eq_multipliers: lam_e.iter().map(|v| sign * v).collect(),
        ineq_multipliers: lam_i.iter().map(|v| sign * v).collect(),
        bound_multipliers: lam_b.iter().map(|v| sign * v).collect(),
        constraint_violation: max_violation(&pt.ce, &pt.ci),
        x: pt.x,
        status,
        kkt_residual: kkt,
        iterations,
    })
}

/// Scaled KKT residual at `pt` using the QP multipliers.
fn kkt_residual(pt: &Point, step: &Step) -> f64 {
    let stat = &pt.g + pt.je.transpose() * &step.lam_e + pt.ji.transpose() * &step.lam_i + &step.lam_b;
    let scale = 1.0f64.max(pt.g.amax());
    let compl = step
        .lam_i
        .iter()
        .zip(pt.ci.iter())
        .fold(0.0f64, |a, (l, c)| a.max((l * c).abs()));
    (stat.amax() / scale).max(compl)
}

fn qp_step(pt: &Point, hess: &DMatrix<f64>, bounds: &super::Bounds, rho: f64) -> Result<Step> {
    let n = pt.x.len();
    let me = pt.ce.len();
    let mi = pt.ci.len();
    // Bound rows on d.
    let mut brow: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..n {
        if bounds.upper[i].is_finite() {
            brow.push((i, 1.0, bounds.upper[i] - pt.x[i]));
        }
        if bounds.lower[i].is_finite() {
            brow.push((i, -1.0, pt.x[i] - bounds.lower[i]));
        }
    }
    let nb = brow.len();
    let mut a_in = DMatrix::zeros(mi + nb, n);
    let mut b_in = DVector::zeros(mi + nb);
    a_in.view_mut((0, 0), (mi, n)).copy_from(&pt.ji);
    for i in 0..mi {
        b_in[i] = -pt.ci[i];
    }
    for (k, (i, s, b)) in brow.iter().enumerate() {
        a_in[(mi + k, *i)] = *s;
        b_in[mi + k] = *b;
    }
    let b_eq = -&pt.ce;

    let split = |qp: &QpSolution, d: DVector<f64>| -> Step {
        let lam_i = qp.ineq_multipliers.rows(0, mi).into_owned();
        let mut lam_b = DVector::zeros(n);
        for (k, (i, s, _)) in brow.iter().enumerate() {
            lam_b[*i] += s * qp.ineq_multipliers[mi + k];
        }
        let lin_e = &pt.ce + &pt.je * &d;
        let lin_i = &pt.ci + &pt.ji * &d;
        Step {
            lin_violation: violation(&lin_e, &lin_i),
            d,
            lam_e: qp.eq_multipliers.rows(0, me).into_owned(),
            lam_i,
            lam_b,
        }
    };

    if let Ok(qp) = solve_qp(hess, &pt.g, &pt.je, &b_eq, &a_in, &b_in) {
        if qp.x.iter().all(|v| v.is_finite()) {
            let d = qp.x.clone();
            return Ok(split(&qp, d));
        }
    }

    // Elastic mode: d, then v, w >= 0 for equalities and t >= 0 for
    // inequalities, penalized linearly.
    let penalty = (10.0 * rho).max(10.0);
    let ne = n + 2 * me + mi;
    let reg = 1e-8 * (1.0 + hess.diagonal().amax());
    let mut g_el = DMatrix::identity(ne, ne) * reg;
    g_el.view_mut((0, 0), (n, n)).copy_from(hess);
    let mut a_el = DVector::from_element(ne, penalty);
    a_el.rows_mut(0, n).copy_from(&pt.g);
    let mut ae = DMatrix::zeros(me, ne);
    ae.view_mut((0, 0), (me, n)).copy_from(&pt.je);
    for i in 0..me {
        ae[(i, n + i)] = -1.0;
        ae[(i, n + me + i)] = 1.0;
    }
    let rows = mi + nb + 2 * me + mi;
    let mut ai = DMatrix::zeros(rows, ne);
    let mut bi = DVector::zeros(rows);
    ai.view_mut((0, 0), (mi + nb, n)).copy_from(&a_in);
    bi.rows_mut(0, mi + nb).copy_from(&b_in);
    for i in 0..mi {
        ai[(i, n + 2 * me + i)] = -1.0;
    }
    for k in 0..(2 * me + mi) {
        ai[(mi + nb + k, n + k)] = -1.0;
    }
    let qp = solve_qp(&g_el, &a_el, &ae, &b_eq, &ai, &bi)?;
    let d = qp.x.rows(0, n).into_owned();
    let trimmed = QpSolution {
        x: d.clone(),
        eq_multipliers: qp.eq_multipliers.clone(),
        ineq_multipliers: qp.ineq_multipliers.rows(0, mi + nb).into_owned(),
        objective: qp.objective,
    };
    Ok(split(&trimmed, d))
}

/// Minimum-norm correction that pulls the active constraints back onto
/// their linearization at the full step.
fn second_order_correction<P: NlpProblem + ?Sized>(
    ev: &Evaluator<'_, P>,
    pt: &Point,
    step: &Step,
    x_full: &[f64],
    tol: &Tolerances,
) -> Option<Vec<f64>> {
    let n = pt.x.len();
    let (_, ce, ci) = ev.values(x_full);
    let lin_i = &pt.ci + &pt.ji * &step.d;
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..ce.len() {
        rows.push((pt.je.row(i).transpose(), ce[i]));
    }
    for i in 0..ci.len() {
        if step.lam_i[i] > 0.0 || lin_i[i] >= -tol.active {
            rows.push((pt.ji.row(i).transpose(), ci[i]));
        }
    }
    if rows.is_empty() || rows.len() > n {
        return None;
    }
    let m = rows.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut c = DVector::zeros(m);
    for (k, (r, v)) in rows.into_iter().enumerate() {
        jac.set_row(k, &r.transpose());
        c[k] = v;
    }
    let jjt = &jac * jac.transpose();
    let w = jjt.cholesky()?.solve(&c);
    let corr = jac.transpose() * w;
    Some(x_full.iter().zip(corr.iter()).map(|(x, d)| x - d).collect())
}

/// Powell-damped BFGS update keeping `hess` positive definite.
fn damped_bfgs(hess: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, first: &mut bool) {
    let ss = s.dot(s);
    if !(ss > 0.0) || y.iter().any(|v| !v.is_finite()) {
        return;
    }
    let sy = s.dot(y);
    if *first && sy > 0.0 {
        *hess = DMatrix::identity(s.len(), s.len()) * (y.dot(y) / sy);
        *first = false;
    }
    let bs = &*hess * s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return;
    }
    let r = if sy >= 0.2 * sbs {
        y.clone()
    } else {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    };
    let sr = s.dot(&r);
    if !(sr > 1e-300) {
        return;
    }
    *hess += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
    // Keep symmetry exact against rounding drift.
    let t = hess.transpose();
    *hess = (&*hess + t) * 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{Bounds, Sense};

    struct Quadratic;
    impl NlpProblem for Quadratic {
        fn dimension(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (x[0] - 3.0).powi(2)
        }
    }

    struct Disk;
    impl NlpProblem for Disk {
        fn dimension(&self) -> usize {
            1
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0]
        }
        fn constraints(&self, x: &[f64], _eq: &mut [f64], ineq: &mut [f64]) {
            ineq[0] = x[0] * x[0] - 1.0;
        }
    }

    /// Maximize x on the unit circle intersected with the upper half plane.
    struct Circle;
    impl NlpProblem for Circle {
        fn dimension(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            1
        }
        fn sense(&self) -> Sense {
            Sense::Maximize
        }
        fn bounds(&self) -> Bounds {
            Bounds::new(vec![-2.0, 0.0], vec![2.0, 2.0])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] + 0.5 * x[1]
        }
        fn constraints(&self, x: &[f64], eq: &mut [f64], _ineq: &mut [f64]) {
            eq[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
        }
    }

    #[test]
    fn unconstrained_quadratic() {
        let s = solve_local(&Quadratic, &[0.0], &Tolerances::default()).unwrap();
        assert!(s.is_converged());
        assert!((s.x[0] - 3.0).abs() < 1e-8);
        assert!(s.objective < 1e-14);
    }

    #[test]
    fn active_inequality_with_multiplier() {
        let s = solve_local(&Disk, &[0.5], &Tolerances::default()).unwrap();
        assert!(s.is_converged());
        assert!((s.x[0] + 1.0).abs() < 1e-8);
        // 1 + nu * 2x = 0 at x = -1 gives nu = 1/2.
        assert!((s.ineq_multipliers[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn maximization_on_a_curve() {
        let s = solve_local(&Circle, &[0.0, 0.5], &Tolerances::default()).unwrap();
        assert!(s.is_converged(), "{s:?}");
        let r = (1.25f64).sqrt();
        assert!((s.x[0] - 1.0 / r).abs() < 1e-8 && (s.x[1] - 0.5 / r).abs() < 1e-8);
        // grad f + nu grad h = 0: 1 + nu 2x = 0.
        assert!((1.0 + s.eq_multipliers[0] * 2.0 * s.x[0]).abs() < 1e-7);
    }

    #[test]
    fn start_outside_box_is_rejected() {
        assert!(solve_local(&Circle, &[3.0, 0.0], &Tolerances::default()).is_err());
    }
}
