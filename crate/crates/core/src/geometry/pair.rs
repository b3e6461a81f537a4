use nalgebra::DMatrix;

use super::{check_box_contact, solve_certified, AnchorSet, Certificate, GeometrySettings, RegionContext};
use crate::estimation::ConfidenceRegion;
use crate::nlp::{Bounds, NlpProblem, NlpSolution, Sense};
use crate::prelude::*;
use crate::Result;

/// `max |phi1 - phi2|^2` with both points in the region; variables are
/// `(phi1, phi2)` stacked.
#[derive(Debug, Clone)]
pub struct PairProblem {
    pub cr: ConfidenceRegion,
}

impl NlpProblem for PairProblem {
    fn dimension(&self) -> usize {
        2 * self.cr.num_params()
    }
    fn num_ineq(&self) -> usize {
        2
    }
    fn sense(&self) -> Sense {
        Sense::Maximize
    }
    fn bounds(&self) -> Bounds {
        let b = self.cr.search_box();
        Bounds::new(
            [b.lower.clone(), b.lower.clone()].concat(),
            [b.upper.clone(), b.upper.clone()].concat(),
        )
    }
    fn objective(&self, x: &[f64]) -> f64 {
        let n = self.cr.num_params();
        (0..n).map(|j| (x[j] - x[n + j]).powi(2)).sum()
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let n = self.cr.num_params();
        for j in 0..n {
            let d = 2.0 * (x[j] - x[n + j]);
            grad[j] = d;
            grad[n + j] = -d;
        }
    }
    fn constraints(&self, x: &[f64], _eq: &mut [f64], ineq: &mut [f64]) {
        let n = self.cr.num_params();
        ineq[0] = self.cr.excess(&x[..n]);
        ineq[1] = self.cr.excess(&x[n..]);
    }
    fn constraint_jacobian(&self, x: &[f64], _je: &mut DMatrix<f64>, ji: &mut DMatrix<f64>) {
        let n = self.cr.num_params();
        ji.fill(0.0);
        let mut g = vec![0.0; n];
        self.cr.excess_gradient(&x[..n], &mut g);
        for j in 0..n {
            ji[(0, j)] = g[j];
        }
        self.cr.excess_gradient(&x[n..], &mut g);
        for j in 0..n {
            ji[(1, n + j)] = g[j];
        }
    }
}

#[derive(Debug, Clone)]
pub struct FarthestPair {
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    /// Squared distance.
    pub phi_e: f64,
    pub solution: NlpSolution,
    pub certificate: Certificate,
}

pub fn farthest_pair(cr: &ConfidenceRegion, settings: &GeometrySettings) -> Result<FarthestPair> {
    let ctx = RegionContext::new(cr, settings)?;
    let anchors = super::anchor_points_with(cr, &ctx, settings, None)?;
    farthest_pair_with(cr, &ctx, Some(&anchors), settings, None)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Farthest pair started from anchor pairs and the most distant ray pairs,
/// verified against all pairs of boundary samples.
pub fn farthest_pair_with(
    cr: &ConfidenceRegion,
    ctx: &RegionContext,
    anchors: Option<&AnchorSet>,
    settings: &GeometrySettings,
    warm: Option<&FarthestPair>,
) -> Result<FarthestPair> {
    let n = cr.num_params();
    let problem = PairProblem { cr: cr.clone() };
    let mut samples: Vec<Vec<f64>> = ctx.rays.points.clone();
    if let Some(a) = anchors {
        samples.extend(a.points.iter().cloned());
    }
    // All sample pairs, best first.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..samples.len() {
        for k in i + 1..samples.len() {
            pairs.push((dist2(&samples[i], &samples[k]), i, k));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let stack = |i: usize, k: usize| -> Vec<f64> { [samples[i].clone(), samples[k].clone()].concat() };
    let mut starts = Vec::new();
    if let Some(w) = warm {
        starts.push([w.phi1.clone(), w.phi2.clone()].concat());
    }
    if let Some(a) = anchors {
        for j in 0..n {
            starts.push([a.points[2 * j].clone(), a.points[2 * j + 1].clone()].concat());
        }
    }
    // Distinct well-separated ray pairs.
    let mut used: Vec<(usize, usize)> = Vec::new();
    for (_, i, k) in &pairs {
        if used.len() >= 3 {
            break;
        }
        if used.iter().all(|(a, b)| a != i && b != k && a != k && b != i) {
            used.push((*i, *k));
            starts.push(stack(*i, *k));
        }
    }
    let sample = pairs.first().map(|(d, i, k)| (*d, stack(*i, *k), pairs.len() as u64));
    let (sol, cert) = solve_certified(&problem, starts, sample, "farthest pair", settings)?;
    check_box_contact(cr, &sol.x)?;
    Ok(FarthestPair {
        phi1: sol.x[..n].to_vec(),
        phi2: sol.x[n..].to_vec(),
        phi_e: sol.objective,
        solution: sol,
        certificate: cert,
    })
}
