//! Linearized designs on the Fisher information at `p_hat`.

use nalgebra::DMatrix;
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use super::upper::{minimize_box, UpperEval, UpperOptions};
use super::{select, unit, Candidate, Criterion, DesignProblem, DesignResult, Method, Space};
use crate::linalg::spd_inverse;
use crate::nlp::halton;
use crate::prelude::*;
use crate::{Error, Result};

/// `trace`, `det` or `lambda_max` of `FIM^-1`.
pub fn classical_criterion(fim: &DMatrix<f64>, criterion: Criterion) -> Result<f64> {
    let inv = spd_inverse(fim)?;
    Ok(match criterion {
        Criterion::A => inv.trace(),
        Criterion::D => inv.determinant(),
        Criterion::E => crate::linalg::max_eigenpair(&inv).0,
    })
}

/// Classical design for `problem.criterion`, whatever `problem.method` says.
pub fn classical_design(problem: &DesignProblem) -> Result<DesignResult> {
    let mut p = problem.clone();
    p.method = Method::Classical;
    super::design(&p)
}

enum Objective {
    A,
    LogDet,
    /// Log-sum-exp of the eigenvalues of `FIM^-1` at fixed scale `t`.
    SmoothE {
        t: f64,
        beta: f64,
    },
    MaxE,
}

fn evaluate(space: &Space, obj: &Objective, u: &[f64]) -> Option<UpperEval> {
    let m = space.fim(u);
    let inv = spd_inverse(&m).ok()?;
    let dms = space.fim_derivatives(u);
    let (value, grad) = match obj {
        Objective::A => {
            let inv2 = &inv * &inv;
            let g = dms.iter().map(|d| -inv2.component_mul(d).sum()).collect();
            (inv.trace(), g)
        }
        Objective::LogDet => {
            let eig = crate::linalg::symmetric_eigenvalues(&m);
            let g = dms.iter().map(|d| -inv.component_mul(d).sum()).collect();
            (-eig.iter().map(|v| v.ln()).sum::<f64>(), g)
        }
        Objective::SmoothE { t, beta } => {
            let eig = inv.clone().symmetric_eigen();
            let z: Vec<f64> = eig.eigenvalues.iter().map(|l| beta * l / t).collect();
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
            let total: f64 = ex.iter().sum();
            let value = t / beta * (zmax + total.ln());
            let g = dms
                .iter()
                .map(|d| {
                    (0..ex.len())
                        .map(|i| {
                            let v = eig.eigenvectors.column(i);
                            let l = eig.eigenvalues[i];
                            -(ex[i] / total) * l * l * (v.transpose() * d * v)[(0, 0)]
                        })
                        .sum()
                })
                .collect();
            (value, g)
        }
        Objective::MaxE => {
            let (l, v) = crate::linalg::max_eigenpair(&inv);
            let g = dms.iter().map(|d| -l * l * (v.transpose() * d * &v)[(0, 0)]).collect();
            (l, g)
        }
    };
    value.is_finite().then_some(UpperEval {
        value,
        grad,
        copies: Vec::new(),
    })
}

fn options(space: &Space) -> UpperOptions {
    UpperOptions {
        step_tol: 1e-10,
        copy_tol: f64::INFINITY,
        gradient_tol: 1e-11,
        max_iterations: 500.max(space.problem.settings.max_iterations),
    }
}

fn minimize(space: &Space, obj: &Objective, start: &[f64]) -> Option<(Vec<f64>, usize, bool)> {
    // Normalize by the starting value so one tolerance fits all scales.
    let f0 = match obj {
        Objective::LogDet => 1.0,
        _ => evaluate(space, obj, start)?.value.abs().max(f64::MIN_POSITIVE),
    };
    let mut f = |u: &[f64]| {
        evaluate(space, obj, u).map(|mut e| {
            e.value /= f0;
            e.grad.iter_mut().for_each(|g| *g /= f0);
            e
        })
    };
    let r = minimize_box(&mut f, start, &space.lo, &space.hi, &options(space))?;
    Some((r.x, r.iterations, r.converged))
}

/// Equispaced design plus shifted Halton points over the design box.
pub(crate) fn starts(space: &Space) -> Vec<Vec<f64>> {
    let s = &space.problem.settings;
    let dim = space.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(s.seed);
    let shift: Vec<f64> = (0..dim).map(|_| unit(&mut rng)).collect();
    let mut out = vec![space.equispaced()];
    for i in 0..s.classical_starts {
        let h: Vec<f64> = if dim <= 24 {
            halton(i, dim)
        } else {
            (0..dim).map(|_| unit(&mut rng)).collect()
        };
        out.push(
            (0..dim)
                .map(|k| space.lo[k] + ((h[k] + shift[k]) % 1.0) * (space.hi[k] - space.lo[k]))
                .collect(),
        );
    }
    out
}

pub(crate) fn run(space: &Space, criterion: Criterion, start: &[f64]) -> Result<Candidate> {
    let singular = || Error::Singular("information matrix at the start design".to_string());
    let (u, iterations, converged) = match criterion {
        Criterion::A => minimize(space, &Objective::A, start).ok_or_else(singular)?,
        Criterion::D => minimize(space, &Objective::LogDet, start).ok_or_else(singular)?,
        Criterion::E => {
            let t = classical_criterion(&space.fim(start), Criterion::E)?;
            let smooth = Objective::SmoothE {
                t,
                beta: space.problem.settings.e_sharpness,
            };
            let (u1, it1, c1) = minimize(space, &smooth, start).ok_or_else(singular)?;
            match minimize(space, &Objective::MaxE, &u1) {
                Some((u2, it2, c2)) => {
                    let v1 = classical_criterion(&space.fim(&u1), criterion)?;
                    let v2 = classical_criterion(&space.fim(&u2), criterion)?;
                    if v2 <= v1 {
                        (u2, it1 + it2, c2)
                    } else {
                        (u1, it1 + it2, c1)
                    }
                }
                None => (u1, it1, c1),
            }
        }
    };
    let u = space.sorted(&u);
    let value = classical_criterion(&space.fim(&u), criterion)?;
    Ok(Candidate {
        u,
        objective_exact: f64::NAN,
        objective_surrogate: value,
        iterations,
        converged,
        certificates: Vec::new(),
    })
}

/// Best classical design over all starts.
pub(crate) fn classical_optimum(space: &Space, criterion: Criterion) -> Result<Candidate> {
    let cands: Vec<Candidate> = starts(space)
        .iter()
        .filter_map(|s| run(space, criterion, s).ok())
        .collect();
    select(&cands, |c| c.objective_surrogate)
        .cloned()
        .ok_or(Error::AllStartsFailed(space.problem.settings.classical_starts + 1))
}
