//! Lower-level geometry on exact confidence regions: anchor points and the
//! bounding orthotope, gridded volume, farthest pair, inner/outer ellipsoid
//! scalings and 2-D boundary tracing.
//!
//! Every extremal problem is solved by SQP from several starts and then
//! checked against dense samples of the region: a shared excess grid over the
//! ray bounding box, and boundary points found by bisection along a fan of
//! rays from `p_hat`. A solver value beaten by a sample is re-solved from the
//! winning sample; if that still loses, the computation fails.

mod anchors;
mod pair;
mod scalings;
mod trace;
mod volume;

pub use anchors::{anchor_points, anchor_points_with, bounding_orthotope, AnchorProblem, AnchorSet};
pub use pair::{farthest_pair, farthest_pair_with, FarthestPair, PairProblem};
pub use scalings::{
    ellipsoid_scalings, ellipsoid_scalings_with, EllipsoidScalings, InnerScalingProblem, OuterScalingProblem,
};
pub use trace::{boundary_trace, polygon_area, Polyline};
pub use volume::{grid_volume, grid_volume_with_budget, GridVolume, DEFAULT_NODE_BUDGET};

use crate::estimation::ConfidenceRegion;
use crate::nlp::{self, Bounds, NlpProblem, NlpSolution, Sense, Tolerances};
use crate::prelude::*;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySettings {
    /// Rays in the boundary fan.
    pub rays: usize,
    /// Quasi-random starts per extremal problem, on top of the sample-based
    /// starts.
    pub n_starts: usize,
    pub seed: u64,
    /// Verification grid nodes per axis (capped by `grid_budget`).
    pub grid_resolution: usize,
    pub grid_budget: u64,
    /// Relative gap a certificate may show before the solve is rejected.
    pub certificate_tol: f64,
    pub tolerances: Tolerances,
}

impl Default for GeometrySettings {
    fn default() -> Self {
        Self {
            rays: 96,
            n_starts: 32,
            seed: 0,
            grid_resolution: 400,
            grid_budget: 4_000_000,
            certificate_tol: 1e-6,
            tolerances: Tolerances::default(),
        }
    }
}

/// Comparison of one lower-level solve with dense samples.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Certificate {
    pub label: String,
    /// Best sample minus solver value, sense-adjusted (positive: sample wins).
    pub gap: f64,
    pub value: f64,
    pub samples: u64,
}

impl Certificate {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.gap <= rel_tol * self.value.abs().max(1.0)
    }
}

/// Boundary points found by bisection along rays from `p_hat`.
#[derive(Debug, Clone)]
pub struct RayFan {
    pub center: Vec<f64>,
    /// Per-parameter direction scales.
    pub scales: Vec<f64>,
    /// Unit directions in scaled coordinates.
    pub directions: Vec<Vec<f64>>,
    /// Scaled radius of each boundary point.
    pub radii: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

/// `n` directions on the unit sphere: equal angles in 2-D, axis pairs plus
/// Box-Muller-mapped Halton points above.
pub fn ray_directions(dim: usize, n: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|k| {
                let th = 2.0 * core::f64::consts::PI * k as f64 / n as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let mut dirs = Vec::with_capacity(n.max(2 * dim));
            for j in 0..dim {
                for s in [1.0, -1.0] {
                    let mut d = vec![0.0; dim];
                    d[j] = s;
                    dirs.push(d);
                }
            }
            let pairs = dim.div_ceil(2);
            let mut k = 0;
            while dirs.len() < n {
                let h = nlp::halton(k, 2 * pairs);
                k += 1;
                let mut d = Vec::with_capacity(2 * pairs);
                for i in 0..pairs {
                    let r = (-2.0 * (1.0 - h[2 * i]).ln()).sqrt();
                    let th = 2.0 * core::f64::consts::PI * h[2 * i + 1];
                    d.push(r * th.cos());
                    d.push(r * th.sin());
                }
                d.truncate(dim);
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    dirs.push(d.into_iter().map(|v| v / norm).collect());
                }
            }
            dirs
        }
    }
}

/// Largest `t` with `center + t dir` inside `bounds`.
fn exit_distance(bounds: &Bounds, center: &[f64], dir: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for j in 0..dir.len() {
        if dir[j] > 0.0 {
            t = t.min((bounds.upper[j] - center[j]) / dir[j]);
        } else if dir[j] < 0.0 {
            t = t.min((bounds.lower[j] - center[j]) / dir[j]);
        }
    }
    t
}

/// First sign change of the excess along `center + t dir`, `t` in
/// `(0, t_max]`, returning the feasible side of the bracket. `None` when the
/// ray leaves `t_max` without crossing.
pub(crate) fn ray_root(excess: impl Fn(&[f64]) -> f64, center: &[f64], dir: &[f64], t_max: f64) -> Option<f64> {
    let at = |t: f64| -> f64 {
        let p: Vec<f64> = center.iter().zip(dir).map(|(c, d)| c + t * d).collect();
        excess(&p)
    };
    let e0 = at(0.0);
    if e0 > 0.0 {
        return Some(0.0);
    }
    // Geometric bracket search keeps the first crossing.
    let mut lo = 0.0;
    let mut e_lo = e0;
    let mut hi = (1e-3 * t_max).min(t_max);
    let mut e_hi = at(hi);
    while e_hi <= 0.0 {
        if hi >= t_max {
            return None;
        }
        lo = hi;
        e_lo = e_hi;
        hi = (hi * 1.6).min(t_max);
        e_hi = at(hi);
    }
    // Illinois false position with bisection fallback.
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi {
            break;
        }
        let mut t = if e_hi.is_finite() {
            (lo * e_hi - hi * e_lo) / (e_hi - e_lo)
        } else {
            0.5 * (lo + hi)
        };
        if !(t > lo && t < hi) {
            t = 0.5 * (lo + hi);
        }
        let e = at(t);
        if e <= 0.0 {
            lo = t;
            e_lo = e;
            if side == -1 && e_hi.is_finite() {
                e_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            e_hi = e;
            if side == 1 {
                e_lo *= 0.5;
            }
            side = 1;
        }
    }
    Some(lo)
}

impl RayFan {
    /// Boundary fan of `n_rays` rays. Fails when a ray reaches the search box
    /// without leaving the region.
    pub fn new(cr: &ConfidenceRegion, n_rays: usize) -> Result<Self> {
        let center = cr.p_hat().to_vec();
        let bounds = cr.search_box();
        let n = center.len();
        let scales: Vec<f64> = (0..n).map(|j| 0.5 * (bounds.upper[j] - bounds.lower[j])).collect();
        let directions = ray_directions(n, n_rays.max(2 * n));
        let mut radii = Vec::with_capacity(directions.len());
        let mut points = Vec::with_capacity(directions.len());
        for w in &directions {
            let dir: Vec<f64> = w.iter().zip(&scales).map(|(a, s)| a * s).collect();
            let t_max = exit_distance(bounds, &center, &dir);
            let Some(t) = ray_root(|p| cr.excess(p), &center, &dir, t_max) else {
                let parameter = (0..n)
                    .max_by(|a, b| dir[*a].abs().total_cmp(&dir[*b].abs()))
                    .unwrap_or(0);
                return Err(Error::BoxTooSmall { parameter });
            };
            radii.push(t);
            points.push(center.iter().zip(&dir).map(|(c, d)| c + t * d).collect());
        }
        Ok(Self {
            center,
            scales,
            directions,
            radii,
            points,
        })
    }

    /// Axis-aligned box of the boundary samples.
    pub fn bbox(&self) -> Bounds {
        let n = self.center.len();
        let mut lo = self.center.clone();
        let mut hi = self.center.clone();
        for p in &self.points {
            for j in 0..n {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        Bounds::new(lo, hi)
    }

    /// Star-shaped volume estimate `prod(s) |S^(n-1)| / n mean(t^n)`.
    pub fn volume(&self) -> f64 {
        let n = self.center.len();
        let nf = n as f64;
        let sphere = 2.0 * core::f64::consts::PI.powf(nf / 2.0) / crate::stats::ln_gamma(nf / 2.0).exp();
        let mean = self.radii.iter().map(|t| t.powi(n as i32)).sum::<f64>() / self.radii.len() as f64;
        self.scales.iter().product::<f64>() * sphere / nf * mean
    }
}

/// Excess values on a regular grid, shared by all certificates of one region.
#[derive(Debug, Clone)]
pub struct ExcessGrid {
    pub lower: Vec<f64>,
    pub step: Vec<f64>,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    tolerance: f64,
}

impl ExcessGrid {
    pub fn new(cr: &ConfidenceRegion, region: &Bounds, resolution: usize, budget: u64) -> Result<Self> {
        let n = cr.num_params();
        if n > nlp::MAX_GRID_DIMENSION {
            return Err(Error::InvalidArgument(format!(
                "excess grid needs at most {} parameters",
                nlp::MAX_GRID_DIMENSION
            )));
        }
        let per_axis = (budget as f64).powf(1.0 / n as f64).floor() as usize;
        let res = resolution.min(per_axis).max(2);
        let shape = vec![res; n];
        let step: Vec<f64> = (0..n)
            .map(|j| (region.upper[j] - region.lower[j]) / (res - 1) as f64)
            .collect();
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        let mut p = vec![0.0; n];
        for _ in 0..total {
            for j in 0..n {
                p[j] = region.lower[j] + idx[j] as f64 * step[j];
            }
            values.push(cr.excess(&p));
            for j in 0..n {
                idx[j] += 1;
                if idx[j] < res {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(Self {
            lower: region.lower.clone(),
            step,
            shape,
            values,
            tolerance: cr.tolerance(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// The box the grid covers.
    pub fn region(&self) -> Bounds {
        let upper = (0..self.shape.len())
            .map(|j| self.lower[j] + (self.shape[j] - 1) as f64 * self.step[j])
            .collect();
        Bounds::new(self.lower.clone(), upper)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node(&self, mut flat: usize) -> Vec<f64> {
        let n = self.shape.len();
        let mut p = vec![0.0; n];
        for j in 0..n {
            let i = flat % self.shape[j];
            flat /= self.shape[j];
            p[j] = self.lower[j] + i as f64 * self.step[j];
        }
        p
    }

    /// Nodes inside the region.
    pub fn members(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, e)| **e <= self.tolerance)
            .map(|(i, _)| self.node(i))
    }

    /// Best member by `score` under `sense`.
    pub fn best_member(&self, sense: Sense, score: impl Fn(&[f64]) -> f64) -> Option<(f64, Vec<f64>, u64)> {
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut count = 0u64;
        for p in self.members() {
            count += 1;
            let v = score(&p);
            if best.as_ref().is_none_or(|(b, _)| sense.better(v, *b)) {
                best = Some((v, p));
            }
        }
        best.map(|(v, p)| (v, p, count))
    }
}

/// Rays and verification grid of one region.
#[derive(Debug, Clone)]
pub struct RegionContext {
    pub rays: RayFan,
    pub grid: ExcessGrid,
}

impl RegionContext {
    pub fn new(cr: &ConfidenceRegion, settings: &GeometrySettings) -> Result<Self> {
        let rays = RayFan::new(cr, settings.rays)?;
        let bbox = rays.bbox();
        let n = cr.num_params();
        // Pad the ray box: true extremes can sit slightly outside it.
        let mut lo = bbox.lower.clone();
        let mut hi = bbox.upper.clone();
        for j in 0..n {
            let pad = 0.1 * (hi[j] - lo[j]).max(1e-12);
            lo[j] = (lo[j] - pad).max(cr.search_box().lower[j]);
            hi[j] = (hi[j] + pad).min(cr.search_box().upper[j]);
        }
        let grid = ExcessGrid::new(cr, &Bounds::new(lo, hi), settings.grid_resolution, settings.grid_budget)?;
        Ok(Self { rays, grid })
    }
}

/// Fails with `BoxTooSmall` when `x` (of `n_p`-blocks) touches the search box.
pub(crate) fn check_box_contact(cr: &ConfidenceRegion, x: &[f64]) -> Result<()> {
    let b = cr.search_box();
    let n = cr.num_params();
    for (k, v) in x.iter().enumerate() {
        let j = k % n;
        let w = b.upper[j] - b.lower[j];
        if *v - b.lower[j] <= 1e-9 * w || b.upper[j] - *v <= 1e-9 * w {
            return Err(Error::BoxTooSmall { parameter: j });
        }
    }
    Ok(())
}

/// Solves `problem` from `starts`, compares against the best sample, and
/// re-solves from that sample when it wins. Returns the solution and its
/// certificate.
pub(crate) fn solve_certified<P: NlpProblem>(
    problem: &P,
    starts: Vec<Vec<f64>>,
    sample: Option<(f64, Vec<f64>, u64)>,
    label: &str,
    settings: &GeometrySettings,
) -> Result<(NlpSolution, Certificate)> {
    let sense = problem.sense();
    let bounds = problem.bounds();
    let mut starts: Vec<Vec<f64>> = starts
        .into_iter()
        .map(|mut s| {
            bounds.project(&mut s);
            s
        })
        .collect();
    if starts.is_empty() {
        if let Some((_, x, _)) = &sample {
            starts.push(x.clone());
        }
    }
    let mut best = nlp::solve_from_starts(problem, &starts, &settings.tolerances).map(|r| r.best);
    let cert = |sol: &NlpSolution| -> Certificate {
        match &sample {
            Some((v, _, count)) => Certificate {
                label: label.to_string(),
                gap: sense.sign() * (sol.objective - v),
                value: sol.objective,
                samples: *count,
            },
            None => Certificate {
                label: label.to_string(),
                gap: f64::NEG_INFINITY,
                value: sol.objective,
                samples: 0,
            },
        }
    };
    if let Ok(sol) = &best {
        let c = cert(sol);
        if c.passes(settings.certificate_tol) {
            return Ok((sol.clone(), c));
        }
    }
    // The sample beat the solver (or every start failed): retry from it.
    if let Some((_, x, _)) = &sample {
        let mut x0 = x.clone();
        bounds.project(&mut x0);
        if let Ok(sol) = nlp::solve_local(problem, &x0, &settings.tolerances) {
            if sol.is_converged() && best.as_ref().map_or(true, |b| sense.better(sol.objective, b.objective)) {
                best = Ok(sol);
            }
        }
    }
    let sol = best?;
    let c = cert(&sol);
    if !c.passes(settings.certificate_tol) {
        return Err(Error::VerificationFailed {
            gap: c.gap,
            tolerance: settings.certificate_tol * c.value.abs().max(1.0),
        });
    }
    Ok((sol, c))
}

/// Indices of the `k` largest scores.
pub(crate) fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_are_unit() {
        for dim in 1..=4 {
            for d in ray_directions(dim, 40) {
                let n: f64 = d.iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ray_root_finds_unit_circle() {
        let t = ray_root(|p| p[0] * p[0] + p[1] * p[1] - 1.0, &[0.0, 0.0], &[0.6, 0.8], 10.0).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!(ray_root(|_| -1.0, &[0.0], &[1.0], 5.0).is_none());
    }
}
