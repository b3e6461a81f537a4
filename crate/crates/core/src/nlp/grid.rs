use super::{merit_value, Bounds, NlpProblem};
use crate::prelude::*;
use crate::{Error, Result};

/// Largest dimension accepted by the dense-grid verifier.
pub const MAX_GRID_DIMENSION: usize = 4;
/// Node budget of one verification grid.
pub const MAX_GRID_NODES: u64 = 50_000_000;

/// Result of comparing a solver value with the best feasible grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCertificate {
    /// Best grid value minus the solver value, sense-adjusted: positive when
    /// the grid found something better than the solver.
    pub gap: f64,
    pub witness: Vec<f64>,
    pub witness_value: f64,
    pub feasible_nodes: u64,
    pub total_nodes: u64,
}

impl GridCertificate {
    pub fn certifies(&self, tolerance: f64) -> bool {
        self.gap <= tolerance
    }
}

/// Evaluates the objective on a `resolution`-per-axis grid over `region`
/// (endpoints included) and compares the best inequality-feasible node with
/// `solver_value`.
pub fn verify_global_on_grid<P: NlpProblem + ?Sized>(
    problem: &P,
    region: &Bounds,
    resolution: usize,
    solver_value: f64,
) -> Result<GridCertificate> {
    let n = problem.dimension();
    if n == 0 || n > MAX_GRID_DIMENSION {
        return Err(Error::InvalidArgument(format!(
            "grid verification needs 1..={MAX_GRID_DIMENSION} variables, got {n}"
        )));
    }
    if problem.num_eq() > 0 {
        return Err(Error::InvalidArgument(
            "grid verification cannot sample equality constraints".to_string(),
        ));
    }
    if resolution < 2 || !region.is_finite() || region.len() != n {
        return Err(Error::InvalidArgument(
            "grid needs a finite box and resolution >= 2".to_string(),
        ));
    }
    let total = (resolution as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if total > MAX_GRID_NODES {
        return Err(Error::GridBudget {
            nodes: total,
            budget: MAX_GRID_NODES,
        });
    }
    let sense = problem.sense();
    let mi = problem.num_ineq();
    let mut ineq = vec![0.0; mi];
    let mut x = vec![0.0; n];
    let mut idx = vec![0usize; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut feasible = 0u64;
    let step: Vec<f64> = (0..n)
        .map(|j| (region.upper[j] - region.lower[j]) / (resolution - 1) as f64)
        .collect();
    for _ in 0..total {
        for j in 0..n {
            x[j] = if idx[j] + 1 == resolution {
                region.upper[j]
            } else {
                region.lower[j] + idx[j] as f64 * step[j]
            };
        }
        problem.constraints(&x, &mut [], &mut ineq);
        if ineq.iter().all(|h| *h <= 0.0) {
            let f = problem.objective(&x);
            if f.is_finite() {
                feasible += 1;
                let better = match &best {
                    None => true,
                    Some((b, _)) => merit_value(sense, f) < merit_value(sense, *b),
                };
                if better {
                    best = Some((f, x.clone()));
                }
            }
        }
        for j in 0..n {
            idx[j] += 1;
            if idx[j] < resolution {
                break;
            }
            idx[j] = 0;
        }
    }
    let Some((value, witness)) = best else {
        return Err(Error::EmptyGrid);
    };
    Ok(GridCertificate {
        gap: merit_value(sense, solver_value) - merit_value(sense, value),
        witness,
        witness_value: value,
        feasible_nodes: feasible,
        total_nodes: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{solve_local, Tolerances};

    /// Two basins; the local solve from 2 finds the worse one.
    struct Wavy;
    impl NlpProblem for Wavy {
        fn dimension(&self) -> usize {
            1
        }
        fn bounds(&self) -> Bounds {
            Bounds::new(vec![-4.0], vec![4.0])
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (3.0 * x[0]).sin() + 0.1 * (x[0] + 1.0).powi(2)
        }
    }

    #[test]
    fn grid_finds_the_better_basin() {
        let local = solve_local(&Wavy, &[2.0], &Tolerances::default()).unwrap();
        let cert = verify_global_on_grid(&Wavy, &Wavy.bounds(), 4001, local.objective).unwrap();
        assert!(cert.gap > 0.1, "{cert:?}");
        assert!(cert.witness[0] < 0.0);
    }

    struct Ball;
    impl NlpProblem for Ball {
        fn dimension(&self) -> usize {
            2
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] + x[1]
        }
        fn constraints(&self, x: &[f64], _e: &mut [f64], i: &mut [f64]) {
            i[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
        }
    }

    #[test]
    fn convex_problem_has_small_gap() {
        let region = Bounds::new(vec![-2.0; 2], vec![2.0; 2]);
        let opt = -(2.0f64).sqrt();
        let cert = verify_global_on_grid(&Ball, &region, 401, opt).unwrap();
        assert!(cert.gap <= 0.0 && cert.gap > -0.05);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let region = Bounds::new(vec![5.0; 2], vec![6.0; 2]);
        assert!(matches!(
            verify_global_on_grid(&Ball, &region, 11, 0.0),
            Err(Error::EmptyGrid)
        ));
    }
}
