use nalgebra::DMatrix;

use super::{check_box_contact, solve_certified, top_k, Certificate, GeometrySettings, RegionContext};
use crate::estimation::ConfidenceRegion;
use crate::linalg::quadratic_form;
use crate::nlp::{Bounds, NlpProblem, NlpSolution, Sense};
use crate::prelude::*;
use crate::{Error, Result};

fn q_gradient(fim: &DMatrix<f64>, x: &[f64], center: &[f64], grad: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        grad[i] = 2.0 * (0..n).map(|j| fim[(i, j)] * (x[j] - center[j])).sum::<f64>();
    }
}

fn excess_row(cr: &ConfidenceRegion, x: &[f64], m: &mut DMatrix<f64>) {
    let mut g = vec![0.0; x.len()];
    cr.excess_gradient(x, &mut g);
    for (j, v) in g.into_iter().enumerate() {
        m[(0, j)] = v;
    }
}

/// `k_out = max q(p)` over the region, `q(p) = (p - p_hat)^T FIM (p - p_hat)`.
#[derive(Debug, Clone)]
pub struct OuterScalingProblem {
    pub cr: ConfidenceRegion,
    pub fim: DMatrix<f64>,
}

impl NlpProblem for OuterScalingProblem {
    fn dimension(&self) -> usize {
        self.cr.num_params()
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn sense(&self) -> Sense {
        Sense::Maximize
    }
    fn bounds(&self) -> Bounds {
        self.cr.search_box().clone()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        quadratic_form(&self.fim, x, self.cr.p_hat())
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        q_gradient(&self.fim, x, self.cr.p_hat(), grad);
    }
    fn constraints(&self, x: &[f64], _eq: &mut [f64], ineq: &mut [f64]) {
        ineq[0] = self.cr.excess(x);
    }
    fn constraint_jacobian(&self, x: &[f64], _je: &mut DMatrix<f64>, ji: &mut DMatrix<f64>) {
        excess_row(&self.cr, x, ji);
    }
}

/// `k_in = min q(p)` over the region boundary.
#[derive(Debug, Clone)]
pub struct InnerScalingProblem {
    pub cr: ConfidenceRegion,
    pub fim: DMatrix<f64>,
}

impl NlpProblem for InnerScalingProblem {
    fn dimension(&self) -> usize {
        self.cr.num_params()
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn bounds(&self) -> Bounds {
        self.cr.search_box().clone()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        quadratic_form(&self.fim, x, self.cr.p_hat())
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        q_gradient(&self.fim, x, self.cr.p_hat(), grad);
    }
    fn constraints(&self, x: &[f64], eq: &mut [f64], _ineq: &mut [f64]) {
        eq[0] = self.cr.excess(x);
    }
    fn constraint_jacobian(&self, x: &[f64], je: &mut DMatrix<f64>, _ji: &mut DMatrix<f64>) {
        excess_row(&self.cr, x, je);
    }
}

#[derive(Debug, Clone)]
pub struct EllipsoidScalings {
    pub k_out: f64,
    pub k_in: f64,
    pub p_out: Vec<f64>,
    pub p_in: Vec<f64>,
    pub outer: NlpSolution,
    pub inner: NlpSolution,
    pub certificates: Vec<Certificate>,
}

pub fn ellipsoid_scalings(
    cr: &ConfidenceRegion,
    fim: &DMatrix<f64>,
    settings: &GeometrySettings,
) -> Result<EllipsoidScalings> {
    let ctx = RegionContext::new(cr, settings)?;
    ellipsoid_scalings_with(cr, fim, &ctx, settings, None)
}

/// Outer scaling verified against grid members and boundary samples, inner
/// scaling against boundary samples.
pub fn ellipsoid_scalings_with(
    cr: &ConfidenceRegion,
    fim: &DMatrix<f64>,
    ctx: &RegionContext,
    settings: &GeometrySettings,
    warm: Option<&EllipsoidScalings>,
) -> Result<EllipsoidScalings> {
    let n = cr.num_params();
    if fim.nrows() != n || fim.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "information matrix",
            expected: n,
            found: fim.nrows(),
        });
    }
    crate::linalg::spd_inverse(fim)?;
    let center = cr.p_hat();
    let q: Vec<f64> = ctx.rays.points.iter().map(|p| quadratic_form(fim, p, center)).collect();
    let rays = ctx.rays.points.len() as u64;

    let outer = OuterScalingProblem {
        cr: cr.clone(),
        fim: fim.clone(),
    };
    let mut starts: Vec<Vec<f64>> = top_k(&q, 3).into_iter().map(|i| ctx.rays.points[i].clone()).collect();
    if let Some(w) = warm {
        starts.insert(0, w.p_out.clone());
    }
    let ray_max = top_k(&q, 1).first().map(|i| (q[*i], ctx.rays.points[*i].clone()));
    let grid_max = ctx
        .grid
        .best_member(Sense::Maximize, |p| quadratic_form(fim, p, center));
    let sample = match (ray_max, grid_max) {
        (Some((rv, rp)), Some((gv, gp, c))) => Some(if rv >= gv {
            (rv, rp, c + rays)
        } else {
            (gv, gp, c + rays)
        }),
        (Some((rv, rp)), None) => Some((rv, rp, rays)),
        (None, g) => g,
    };
    let (out_sol, out_cert) = solve_certified(&outer, starts, sample, "outer scaling", settings)?;
    check_box_contact(cr, &out_sol.x)?;

    let inner = InnerScalingProblem {
        cr: cr.clone(),
        fim: fim.clone(),
    };
    let neg: Vec<f64> = q.iter().map(|v| -v).collect();
    let mut starts: Vec<Vec<f64>> = top_k(&neg, 3).into_iter().map(|i| ctx.rays.points[i].clone()).collect();
    if let Some(w) = warm {
        starts.insert(0, w.p_in.clone());
    }
    let sample = top_k(&neg, 1)
        .first()
        .map(|i| (q[*i], ctx.rays.points[*i].clone(), rays));
    let (in_sol, in_cert) = solve_certified(&inner, starts, sample, "inner scaling", settings)?;
    check_box_contact(cr, &in_sol.x)?;

    Ok(EllipsoidScalings {
        k_out: out_sol.objective,
        k_in: in_sol.objective,
        p_out: out_sol.x.clone(),
        p_in: in_sol.x.clone(),
        outer: out_sol,
        inner: in_sol,
        certificates: vec![out_cert, in_cert],
    })
}
