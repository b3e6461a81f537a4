//! Exact A design as one single-level program: the `2 n_p` anchor problems
//! are written in maximization form `max s_k p_j` (`s_k = -1` for minima) and
//! replaced by their optimality conditions
//!
//! ```text
//! s_k e_j + nu_k grad_p e(p_k; U) = 0,  e(p_k; U) <= 0,  nu_k <= 0,
//! nu_k e(p_k; U) <= mu
//! ```
//!
//! with the complementarity relaxation `mu` driven towards zero. The result
//! is accepted only if the certified anchors at the final design agree.

use super::{Candidate, DesignProblem, DesignResult, Method, Space};
use crate::estimation::ConfidenceRegion;
use crate::geometry::{anchor_points_with, RegionContext};
use crate::nlp::{self, Bounds, NlpProblem, Sense};
use crate::prelude::*;
use crate::{Error, Result};

/// Exact A design through the KKT program.
pub fn exact_a_design_kkt(problem: &DesignProblem) -> Result<DesignResult> {
    let mut p = problem.clone();
    p.method = Method::Kkt;
    p.criterion = super::Criterion::A;
    super::design(&p)
}

struct KktProblem<'a> {
    space: &'a Space<'a>,
    mu: f64,
    n_p: usize,
    search: Bounds,
}

impl KktProblem<'_> {
    fn d(&self) -> usize {
        self.space.dim()
    }

    fn anchors(&self) -> usize {
        2 * self.n_p
    }

    /// Offset of anchor `k`'s block `(p_k, nu_k)`.
    fn block(&self, k: usize) -> usize {
        self.d() + k * (self.n_p + 1)
    }

    fn sign(k: usize) -> f64 {
        if k % 2 == 0 {
            -1.0
        } else {
            1.0
        }
    }

    fn region(&self, x: &[f64]) -> Option<ConfidenceRegion> {
        self.space.region(&x[..self.d()]).ok()
    }
}

impl NlpProblem for KktProblem<'_> {
    fn dimension(&self) -> usize {
        self.d() + self.anchors() * (self.n_p + 1)
    }
    fn num_eq(&self) -> usize {
        self.anchors() * self.n_p
    }
    fn num_ineq(&self) -> usize {
        2 * self.anchors()
    }
    fn sense(&self) -> Sense {
        Sense::Minimize
    }
    fn bounds(&self) -> Bounds {
        let mut lo = self.space.lo.clone();
        let mut hi = self.space.hi.clone();
        for _ in 0..self.anchors() {
            lo.extend_from_slice(&self.search.lower);
            hi.extend_from_slice(&self.search.upper);
            lo.push(f64::NEG_INFINITY);
            hi.push(0.0);
        }
        Bounds::new(lo, hi)
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (0..self.n_p)
            .map(|j| x[self.block(2 * j + 1) + j] - x[self.block(2 * j) + j])
            .sum()
    }
    fn gradient(&self, _x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for j in 0..self.n_p {
            grad[self.block(2 * j + 1) + j] = 1.0;
            grad[self.block(2 * j) + j] = -1.0;
        }
    }
    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        let Some(cr) = self.region(x) else {
            eq.iter_mut().for_each(|v| *v = f64::INFINITY);
            ineq.iter_mut().for_each(|v| *v = f64::INFINITY);
            return;
        };
        let n = self.n_p;
        let mut g = vec![0.0; n];
        for k in 0..self.anchors() {
            let b = self.block(k);
            let p = &x[b..b + n];
            let nu = x[b + n];
            let e = cr.excess_gradient(p, &mut g);
            for i in 0..n {
                let unit = if i == k / 2 { Self::sign(k) } else { 0.0 };
                eq[k * n + i] = unit + nu * g[i];
            }
            ineq[2 * k] = e;
            ineq[2 * k + 1] = nu * e - self.mu;
        }
    }
}

fn kkt_start(space: &Space, u: &[f64], n_p: usize) -> Result<Vec<f64>> {
    let cr = space.region(u)?;
    let geo = space.inner_geometry();
    let ctx = RegionContext::new(&cr, &geo)?;
    let anchors = anchor_points_with(&cr, &ctx, &geo, None)?;
    let mut x = u.to_vec();
    for k in 0..2 * n_p {
        x.extend_from_slice(&anchors.points[k]);
        let nu = anchors.solutions[k].ineq_multipliers[0];
        x.push(if k % 2 == 0 { -nu } else { nu });
    }
    Ok(x)
}

pub(crate) fn run(space: &Space, start: &[f64]) -> Result<Candidate> {
    let s = &space.problem.settings;
    let n_p = space.problem.model.num_params();
    let search = space.region(start)?.search_box().clone();
    let mut x = kkt_start(space, start, n_p)?;
    let mut problem = KktProblem {
        space,
        mu: s.kkt_mu_start,
        n_p,
        search,
    };
    let tol = s.geometry.tolerances;
    let mut iterations = 0;
    let sol = loop {
        let sol = nlp::solve_local(&problem, &x, &tol)?;
        iterations += sol.iterations;
        x = sol.x.clone();
        if problem.mu <= s.kkt_mu_final * (1.0 + 1e-12) {
            break sol;
        }
        problem.mu = (problem.mu * 0.1).max(s.kkt_mu_final);
    };
    if !sol.is_converged() {
        return Err(Error::NoConvergence(format!("KKT program ended with {:?}", sol.status)));
    }
    let u = space.sorted(&x[..space.dim()]);
    let eval = space.evaluate(&u)?;
    // The KKT anchors must be the certified global extremes.
    let gap = (eval.value - sol.objective).abs();
    let tolerance = 1e-6 * eval.value.abs().max(1.0);
    if gap > tolerance {
        return Err(Error::VerificationFailed { gap, tolerance });
    }
    Ok(Candidate {
        u,
        objective_exact: eval.value,
        objective_surrogate: sol.objective,
        iterations,
        converged: true,
        certificates: eval.certificates,
    })
}
