use nalgebra::DMatrix;

use super::{check_box_contact, solve_certified, top_k, Certificate, GeometrySettings, RegionContext};
use crate::estimation::ConfidenceRegion;
use crate::nlp::{self, Bounds, NlpProblem, NlpSolution, Sense};
use crate::prelude::*;
use crate::Result;

/// `min` or `max p_j` over the region.
#[derive(Debug, Clone)]
pub struct AnchorProblem {
    pub cr: ConfidenceRegion,
    pub coord: usize,
    pub sense: Sense,
}

impl AnchorProblem {
    pub fn new(cr: ConfidenceRegion, coord: usize, sense: Sense) -> Self {
        Self { cr, coord, sense }
    }
}

impl NlpProblem for AnchorProblem {
    fn dimension(&self) -> usize {
        self.cr.num_params()
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn sense(&self) -> Sense {
        self.sense
    }
    fn bounds(&self) -> Bounds {
        self.cr.search_box().clone()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x[self.coord]
    }
    fn gradient(&self, _x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        grad[self.coord] = 1.0;
    }
    fn constraints(&self, x: &[f64], _eq: &mut [f64], ineq: &mut [f64]) {
        ineq[0] = self.cr.excess(x);
    }
    fn constraint_jacobian(&self, x: &[f64], _je: &mut DMatrix<f64>, ji: &mut DMatrix<f64>) {
        let mut g = vec![0.0; x.len()];
        self.cr.excess_gradient(x, &mut g);
        for (j, v) in g.into_iter().enumerate() {
            ji[(0, j)] = v;
        }
    }
}

/// The `2 n_p` coordinate extremes of a region.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    /// Ordered `min p1, max p1, min p2, max p2, ...`.
    pub points: Vec<Vec<f64>>,
    pub ranges: Vec<(f64, f64)>,
    pub phi_a: f64,
    pub solutions: Vec<NlpSolution>,
    pub certificates: Vec<Certificate>,
}

/// Anchors with a fresh ray fan and verification grid.
pub fn anchor_points(cr: &ConfidenceRegion, settings: &GeometrySettings) -> Result<AnchorSet> {
    let ctx = RegionContext::new(cr, settings)?;
    anchor_points_with(cr, &ctx, settings, None)
}

/// Anchors reusing `ctx`; `warm` supplies extra starts (e.g. the previous
/// outer iterate).
pub fn anchor_points_with(
    cr: &ConfidenceRegion,
    ctx: &RegionContext,
    settings: &GeometrySettings,
    warm: Option<&AnchorSet>,
) -> Result<AnchorSet> {
    let n = cr.num_params();
    let mut points = Vec::with_capacity(2 * n);
    let mut solutions = Vec::with_capacity(2 * n);
    let mut certificates = Vec::with_capacity(2 * n);
    let region = ctx.rays.bbox();
    for j in 0..n {
        for (k, sense) in [Sense::Minimize, Sense::Maximize].into_iter().enumerate() {
            let problem = AnchorProblem::new(cr.clone(), j, sense);
            let scores: Vec<f64> = ctx.rays.points.iter().map(|p| -sense.sign() * p[j]).collect();
            let mut starts: Vec<Vec<f64>> = top_k(&scores, 3)
                .into_iter()
                .map(|i| ctx.rays.points[i].clone())
                .collect();
            if let Some(w) = warm {
                starts.insert(0, w.points[2 * j + k].clone());
            }
            if settings.n_starts > 0 {
                starts.extend(nlp::halton_starts(&problem, &region, settings.n_starts, settings.seed)?);
            }
            let grid_best = ctx.grid.best_member(sense, |p| p[j]);
            let ray_best = ctx
                .rays
                .points
                .iter()
                .fold(None::<(f64, Vec<f64>)>, |acc, p| match acc {
                    Some((v, _)) if !sense.better(p[j], v) => acc,
                    _ => Some((p[j], p.clone())),
                });
            let sample = match (grid_best, ray_best) {
                (Some((gv, gp, c)), Some((rv, rp))) => Some(if sense.better(rv, gv) {
                    (rv, rp, c + ctx.rays.points.len() as u64)
                } else {
                    (gv, gp, c + ctx.rays.points.len() as u64)
                }),
                (Some(g), None) => Some(g),
                (None, Some((rv, rp))) => Some((rv, rp, ctx.rays.points.len() as u64)),
                (None, None) => None,
            };
            let label = format!("anchor {} p{}", if k == 0 { "min" } else { "max" }, j + 1);
            let (sol, cert) = solve_certified(&problem, starts, sample, &label, settings)?;
            check_box_contact(cr, &sol.x)?;
            points.push(sol.x.clone());
            solutions.push(sol);
            certificates.push(cert);
        }
    }
    let ranges: Vec<(f64, f64)> = (0..n).map(|j| (points[2 * j][j], points[2 * j + 1][j])).collect();
    let phi_a = ranges.iter().map(|(l, u)| u - l).sum();
    Ok(AnchorSet {
        points,
        ranges,
        phi_a,
        solutions,
        certificates,
    })
}

/// `[p_j^L, p_j^U]` per parameter.
pub fn bounding_orthotope(anchors: &AnchorSet) -> Bounds {
    let (lo, hi) = anchors.ranges.iter().copied().unzip();
    Bounds::new(lo, hi)
}
