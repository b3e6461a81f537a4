//! Nested bilevel designs: every outer evaluation re-solves and certifies the
//! lower-level geometry at the current design, warm-started from the previous
//! lower-level solution (the copy variables), and differentiates it through
//! the lower-level optimality conditions.
//!
//! The exact D criterion counts grid nodes and has no useful gradient; its
//! outer steps follow the star-shaped ray volume of the region, whose radii
//! are differentiated implicitly, and the gridded volume decides at the end.

use super::upper::{minimize_box, projected_gradient_norm, UpperEval, UpperResult};
use super::{sensitivity, Candidate, Criterion, DesignProblem, DesignResult, Method, Space};
use crate::estimation::ConfidenceRegion;
use crate::geometry::{
    anchor_points_with, ellipsoid_scalings_with, farthest_pair_with, AnchorProblem, AnchorSet, EllipsoidScalings,
    FarthestPair, GeometrySettings, InnerScalingProblem, OuterScalingProblem, PairProblem, RayFan, RegionContext,
};
use crate::linalg::spd_inverse;
use crate::nlp::{Sense, Tolerances};
use crate::prelude::*;
use crate::{Error, Result};

/// Exact design by the nested scheme, whatever `problem.method` says.
pub fn exact_design_nested(problem: &DesignProblem) -> Result<DesignResult> {
    let mut p = problem.clone();
    p.method = Method::Exact;
    super::design(&p)
}

/// Ellipsoidal D design.
pub fn ellipsoidal_d_design(problem: &DesignProblem) -> Result<DesignResult> {
    let mut p = problem.clone();
    p.method = Method::Ellipsoidal;
    p.criterion = Criterion::D;
    super::design(&p)
}

/// Previous lower-level solutions, reused as starts.
#[derive(Debug, Default)]
struct Warm {
    anchors: Option<AnchorSet>,
    pair: Option<FarthestPair>,
    scalings: Option<EllipsoidScalings>,
    last_error: Option<Error>,
}

fn anchor_gradient(space: &Space, u: &[f64], anchors: &AnchorSet, tol: &Tolerances) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; u.len()];
    for (k, sol) in anchors.solutions.iter().enumerate() {
        let j = k / 2;
        let sense = if k % 2 == 0 { Sense::Minimize } else { Sense::Maximize };
        let build = |th: &[f64]| Ok(AnchorProblem::new(space.region(th)?, j, sense));
        let dv = sensitivity(build, u, sol, tol)?.dvalue;
        let s = if sense == Sense::Maximize { 1.0 } else { -1.0 };
        for i in 0..u.len() {
            grad[i] += s * dv[i];
        }
    }
    Ok(grad)
}

fn pair_gradient(space: &Space, u: &[f64], pair: &FarthestPair, tol: &Tolerances) -> Result<Vec<f64>> {
    let build = |th: &[f64]| Ok(PairProblem { cr: space.region(th)? });
    Ok(sensitivity(build, u, &pair.solution, tol)?.dvalue)
}

fn canonical_pair(pair: &FarthestPair) -> Vec<f64> {
    if super::lex_cmp(&pair.phi1, &pair.phi2).is_le() {
        [pair.phi1.clone(), pair.phi2.clone()].concat()
    } else {
        [pair.phi2.clone(), pair.phi1.clone()].concat()
    }
}

/// Exact A or E value, gradient and copies at `u`.
fn exact_eval(
    space: &Space,
    criterion: Criterion,
    u: &[f64],
    geo: &GeometrySettings,
    warm: &mut Warm,
) -> Result<UpperEval> {
    let cr = space.region(u)?;
    let ctx = RegionContext::new(&cr, geo)?;
    let anchors = anchor_points_with(&cr, &ctx, geo, warm.anchors.as_ref())?;
    let tol = &geo.tolerances;
    let eval = match criterion {
        Criterion::A => UpperEval {
            value: anchors.phi_a,
            grad: anchor_gradient(space, u, &anchors, tol)?,
            copies: anchors.points.concat(),
        },
        Criterion::E => {
            let pair = farthest_pair_with(&cr, &ctx, Some(&anchors), geo, warm.pair.as_ref())?;
            let e = UpperEval {
                value: pair.phi_e,
                grad: pair_gradient(space, u, &pair, tol)?,
                copies: canonical_pair(&pair),
            };
            warm.pair = Some(pair);
            e
        }
        Criterion::D => return Err(Error::InvalidArgument("D uses the ray surrogate".to_string())),
    };
    warm.anchors = Some(anchors);
    Ok(eval)
}

/// `(k_out^(n-1) + k_in^(n-1)) det(FIM^-1)` and its scalings.
pub fn ellipsoidal_objective(
    cr: &ConfidenceRegion,
    ctx: &RegionContext,
    geo: &GeometrySettings,
) -> Result<(f64, EllipsoidScalings)> {
    let fim = cr.fisher();
    let sc = ellipsoid_scalings_with(cr, &fim, ctx, geo, None)?;
    let e = (cr.num_params() - 1) as i32;
    let det_inv = spd_inverse(&fim)?.determinant();
    Ok(((sc.k_out.powi(e) + sc.k_in.powi(e)) * det_inv, sc))
}

fn ellipsoidal_eval(space: &Space, u: &[f64], geo: &GeometrySettings, warm: &mut Warm) -> Result<UpperEval> {
    let cr = space.region(u)?;
    let ctx = RegionContext::new(&cr, geo)?;
    let fim = cr.fisher();
    let inv = spd_inverse(&fim)?;
    let det_inv = inv.determinant();
    let sc = ellipsoid_scalings_with(&cr, &fim, &ctx, geo, warm.scalings.as_ref())?;
    let tol = &geo.tolerances;
    let outer = |th: &[f64]| {
        let cr = space.region(th)?;
        let fim = cr.fisher();
        Ok(OuterScalingProblem { cr, fim })
    };
    let inner = |th: &[f64]| {
        let cr = space.region(th)?;
        let fim = cr.fisher();
        Ok(InnerScalingProblem { cr, fim })
    };
    let d_out = sensitivity(outer, u, &sc.outer, tol)?.dvalue;
    let d_in = sensitivity(inner, u, &sc.inner, tol)?.dvalue;
    let n = cr.num_params() as i32;
    let a = sc.k_out.powi(n - 1) + sc.k_in.powi(n - 1);
    let (ko, ki) = (sc.k_out.powi(n - 2), sc.k_in.powi(n - 2));
    let dms = space.fim_derivatives(u);
    let grad = (0..u.len())
        .map(|k| {
            let ddet = -det_inv * inv.component_mul(&dms[k]).sum();
            (n - 1) as f64 * (ko * d_out[k] + ki * d_in[k]) * det_inv + a * ddet
        })
        .collect();
    let copies = [sc.p_out.clone(), sc.p_in.clone()].concat();
    let value = a * det_inv;
    warm.scalings = Some(sc);
    Ok(UpperEval { value, grad, copies })
}

/// Ray volume of the design region at `u` and its gradient in `u`.
pub fn ray_volume_gradient(problem: &DesignProblem, u: &[f64]) -> Result<(f64, Vec<f64>)> {
    let space = Space::new(problem)?;
    let e = ray_eval(&space, u)?;
    Ok((e.value, e.grad))
}

/// Radii move as `dt/dU = -(de/dU) / (de/dt)` along each fixed ray.
fn ray_eval(space: &Space, u: &[f64]) -> Result<UpperEval> {
    let cr = space.region(u)?;
    let fan = RayFan::new(&cr, space.problem.settings.geometry.rays)?;
    let n = cr.num_params();
    let value = fan.volume();
    let mean: f64 = fan.radii.iter().map(|t| t.powi(n as i32)).sum::<f64>() / fan.radii.len() as f64;
    let factor = value / mean;
    let mut grad = vec![0.0; u.len()];
    let mut gp = vec![0.0; n];
    for ((w, t), p) in fan.directions.iter().zip(&fan.radii).zip(&fan.points) {
        cr.excess_gradient(p, &mut gp);
        let de_dt: f64 = (0..n).map(|j| gp[j] * w[j] * fan.scales[j]).sum();
        if !(de_dt > 0.0) {
            return Err(Error::Singular("ray tangent to the region boundary".to_string()));
        }
        let de_du = space.excess_input_gradient(u, p);
        let c = n as f64 * t.powi(n as i32 - 1) / fan.radii.len() as f64;
        for k in 0..u.len() {
            grad[k] -= factor * c * de_du[k] / de_dt;
        }
    }
    Ok(UpperEval {
        value,
        grad,
        copies: fan.radii,
    })
}

/// Outer minimization with the saddle guard: after convergence, seeded
/// probes of radius `saddle_radius` must not improve the objective by more
/// than `saddle_tol`, otherwise the run restarts from the improving probe.
fn guarded_minimize(
    space: &Space,
    start: &[f64],
    f: &mut dyn FnMut(&[f64]) -> Option<UpperEval>,
) -> Option<UpperResult> {
    let s = &space.problem.settings;
    let opts = space.upper_options();
    let mut x0 = start.to_vec();
    let mut total = 0;
    let mut last = None;
    for round in 0..4u64 {
        let mut r = minimize_box(f, &x0, &space.lo, &space.hi, &opts)?;
        total += r.iterations;
        let mut better = None;
        for d in space.probes(round) {
            let xp: Vec<f64> = (0..d.len())
                .map(|k| (r.x[k] + d[k]).clamp(space.lo[k], space.hi[k]))
                .collect();
            if let Some(e) = f(&xp) {
                if e.value < r.eval.value - s.saddle_tol {
                    better = Some(xp);
                    break;
                }
            }
        }
        r.iterations = total;
        match better {
            None => return Some(r),
            Some(xp) => {
                r.converged = false;
                last = Some(r);
                x0 = xp;
            }
        }
    }
    last
}

pub(crate) fn run_exact(space: &Space, criterion: Criterion, start: &[f64]) -> Result<Candidate> {
    if criterion == Criterion::D {
        return run_exact_d(space, start);
    }
    let geo = space.inner_geometry();
    let mut warm = Warm::default();
    let mut f = |u: &[f64]| match exact_eval(space, criterion, u, &geo, &mut warm) {
        Ok(e) => Some(e),
        Err(e) => {
            warm.last_error = Some(e);
            None
        }
    };
    let r = guarded_minimize(space, start, &mut f);
    let Some(r) = r else {
        return Err(warm
            .last_error
            .take()
            .unwrap_or(Error::NoConvergence("outer iteration".to_string())));
    };
    let u = space.sorted(&r.x);
    let eval = space.evaluate(&u)?;
    Ok(Candidate {
        u,
        objective_exact: eval.value,
        objective_surrogate: eval.value,
        iterations: r.iterations,
        converged: r.converged,
        certificates: eval.certificates,
    })
}

fn run_exact_d(space: &Space, start: &[f64]) -> Result<Candidate> {
    let mut last_error = None;
    let mut f = |u: &[f64]| match ray_eval(space, u) {
        Ok(e) => Some(e),
        Err(e) => {
            last_error = Some(e);
            None
        }
    };
    let r = guarded_minimize(space, start, &mut f);
    let Some(r) = r else {
        return Err(last_error.unwrap_or(Error::NoConvergence("outer iteration".to_string())));
    };
    let u = space.sorted(&r.x);
    let eval = space.evaluate(&u)?;
    // A step is kept only if the gridded volume agrees that it helped.
    let s0 = space.sorted(start);
    if let Ok(e0) = space.evaluate(&s0) {
        if e0.value < eval.value {
            let v0 = ray_eval(space, &s0).map(|e| e.value).unwrap_or(f64::NAN);
            return Ok(Candidate {
                u: s0,
                objective_exact: e0.value,
                objective_surrogate: v0,
                iterations: r.iterations,
                converged: false,
                certificates: e0.certificates,
            });
        }
    }
    Ok(Candidate {
        u,
        objective_exact: eval.value,
        objective_surrogate: r.eval.value,
        iterations: r.iterations,
        converged: r.converged,
        certificates: eval.certificates,
    })
}

pub(crate) fn run_ellipsoidal(space: &Space, start: &[f64]) -> Result<Candidate> {
    let geo = space.inner_geometry();
    let mut warm = Warm::default();
    let mut f = |u: &[f64]| match ellipsoidal_eval(space, u, &geo, &mut warm) {
        Ok(e) => Some(e),
        Err(e) => {
            warm.last_error = Some(e);
            None
        }
    };
    let r = guarded_minimize(space, start, &mut f);
    let Some(r) = r else {
        return Err(warm
            .last_error
            .take()
            .unwrap_or(Error::NoConvergence("outer iteration".to_string())));
    };
    let u = space.sorted(&r.x);
    // Re-score with the full verification settings.
    let geo = &space.problem.settings.geometry;
    let cr = space.region(&u)?;
    let ctx = RegionContext::new(&cr, geo)?;
    let (value, sc) = ellipsoidal_objective(&cr, &ctx, geo)?;
    Ok(Candidate {
        u,
        objective_exact: f64::NAN,
        objective_surrogate: value,
        iterations: r.iterations,
        converged: r.converged,
        certificates: sc.certificates,
    })
}

/// Outer objective of `problem` at `u` (exact A/E, ray volume for D,
/// ellipsoidal objective) with its sensitivity gradient and the norm of the
/// projected gradient.
pub fn outer_gradient(problem: &DesignProblem, u: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
    let space = Space::new(problem)?;
    let geo = &problem.settings.geometry;
    let mut warm = Warm::default();
    let e = match (problem.method, problem.criterion) {
        (Method::Ellipsoidal, _) => ellipsoidal_eval(&space, u, geo, &mut warm)?,
        (_, Criterion::D) => ray_eval(&space, u)?,
        (_, c) => exact_eval(&space, c, u, geo, &mut warm)?,
    };
    let pg = projected_gradient_norm(u, &e.grad, &space.lo, &space.hi);
    Ok((e.value, e.grad, pg))
}
