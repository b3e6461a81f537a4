use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use super::{merit_value, solve_local, Bounds, NlpProblem, NlpSolution, Tolerances};
use crate::prelude::*;
use crate::{Error, Result};

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Point `index` of the Halton sequence in `[0, 1)^dim`. Index 0 is skipped
/// so the first point is not the origin.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "Halton dimension above {}", PRIMES.len());
    (0..dim)
        .map(|j| {
            let base = PRIMES[j];
            let mut i = index as u64 + 1;
            let mut f = 1.0;
            let mut r = 0.0;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MultistartResult {
    pub best: NlpSolution,
    /// Every local solution, in start order (failed solves omitted).
    pub pool: Vec<NlpSolution>,
    pub starts: Vec<Vec<f64>>,
    pub converged: usize,
}

/// Local solves from `n_starts` shifted Halton points over `region`
/// (intersected with the problem box). The seed fixes a Cranley-Patterson
/// rotation, so the first `k` starts are the same for every `n_starts >= k`.
pub fn solve_multistart<P: NlpProblem + ?Sized>(
    problem: &P,
    region: &Bounds,
    n_starts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<MultistartResult> {
    if n_starts == 0 {
        return Err(Error::InvalidArgument("n_starts must be at least 1".to_string()));
    }
    let starts = halton_starts(problem, region, n_starts, seed)?;
    solve_from_starts(problem, &starts, tol)
}

pub(crate) fn halton_starts<P: NlpProblem + ?Sized>(
    problem: &P,
    region: &Bounds,
    n_starts: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = problem.dimension();
    if region.len() != n {
        return Err(Error::DimensionMismatch {
            what: "multistart region",
            expected: n,
            found: region.len(),
        });
    }
    let pb = problem.bounds();
    let lo: Vec<f64> = (0..n).map(|j| region.lower[j].max(pb.lower[j])).collect();
    let hi: Vec<f64> = (0..n).map(|j| region.upper[j].min(pb.upper[j])).collect();
    if lo
        .iter()
        .zip(&hi)
        .any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h)
    {
        return Err(Error::InvalidArgument(
            "multistart region must be finite and nonempty".to_string(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..n)
        .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
        .collect();
    Ok((0..n_starts)
        .map(|k| {
            halton(k, n)
                .into_iter()
                .enumerate()
                .map(|(j, h)| {
                    let t = (h + shift[j]).fract();
                    lo[j] + t * (hi[j] - lo[j])
                })
                .collect()
        })
        .collect())
}

/// Local solves from explicit starts; the best converged solution wins, ties
/// going to the earliest start.
pub fn solve_from_starts<P: NlpProblem + ?Sized>(
    problem: &P,
    starts: &[Vec<f64>],
    tol: &Tolerances,
) -> Result<MultistartResult> {
    let sense = problem.sense();
    let mut pool: Vec<NlpSolution> = Vec::with_capacity(starts.len());
    let mut best: Option<usize> = None;
    let mut converged = 0;
    for x0 in starts {
        let Ok(sol) = solve_local(problem, x0, tol) else {
            continue;
        };
        if sol.is_converged() {
            converged += 1;
            let better = match best {
                None => true,
                Some(b) => merit_value(sense, sol.objective) < merit_value(sense, pool[b].objective),
            };
            if better {
                best = Some(pool.len());
            }
        }
        pool.push(sol);
    }
    let Some(b) = best else {
        return Err(Error::AllStartsFailed(starts.len()));
    };
    Ok(MultistartResult {
        best: pool[b].clone(),
        pool,
        starts: starts.to_vec(),
        converged,
    })
}
