//! Smooth constrained local optimization for the small dense programs that
//! appear as lower levels (2 to 16 variables, a handful of constraints), a
//! multistart wrapper over low-discrepancy starts, and a dense-grid check of
//! global optimality.
//!
//! Problems are `min` or `max` of `f(x)` subject to `h_E(x) = 0`,
//! `h_I(x) <= 0` and box bounds. Multipliers are reported for the Lagrangian
//! `L = f + nu_E . h_E + nu_I . h_I`, so a converged point satisfies
//! `grad f + J_E^T nu_E + J_I^T nu_I + z = 0` where `z` collects the bound
//! multipliers. Inequality multipliers are `>= 0` for minimization and `<= 0`
//! for maximization.

mod grid;
mod multistart;
mod qp;
mod sqp;

pub use grid::{verify_global_on_grid, GridCertificate, MAX_GRID_DIMENSION, MAX_GRID_NODES};
pub(crate) use multistart::halton_starts;
pub use multistart::{halton, solve_from_starts, solve_multistart, MultistartResult};
pub use qp::{solve_qp, QpSolution};
pub use sqp::solve_local;

use nalgebra::DMatrix;

use crate::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// `+1` for minimization, `-1` for maximization.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }

    /// True when `a` is strictly better than `b` under this sense.
    pub fn better(self, a: f64, b: f64) -> bool {
        self.sign() * a < self.sign() * b
    }
}

/// Box bounds; infinite entries mean unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// A smooth nonlinear program. Gradients and Jacobians default to central
/// finite differences.
pub trait NlpProblem {
    fn dimension(&self) -> usize;

    fn num_eq(&self) -> usize {
        0
    }

    fn num_ineq(&self) -> usize {
        0
    }

    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn bounds(&self) -> Bounds {
        Bounds::unbounded(self.dimension())
    }

    fn objective(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        central_gradient(|z| self.objective(z), x, grad);
    }

    fn constraints(&self, _x: &[f64], _eq: &mut [f64], _ineq: &mut [f64]) {}

    /// Jacobians of `h_E` (`num_eq x n`) and `h_I` (`num_ineq x n`).
    fn constraint_jacobian(&self, x: &[f64], jac_eq: &mut DMatrix<f64>, jac_ineq: &mut DMatrix<f64>) {
        let n = self.dimension();
        let (me, mi) = (self.num_eq(), self.num_ineq());
        if me + mi == 0 {
            return;
        }
        let mut probe = x.to_vec();
        let (mut ep, mut ip) = (vec![0.0; me], vec![0.0; mi]);
        let (mut em, mut im) = (vec![0.0; me], vec![0.0; mi]);
        for j in 0..n {
            let h = fd_step(x[j]);
            probe[j] = x[j] + h;
            self.constraints(&probe, &mut ep, &mut ip);
            probe[j] = x[j] - h;
            self.constraints(&probe, &mut em, &mut im);
            probe[j] = x[j];
            for i in 0..me {
                jac_eq[(i, j)] = (ep[i] - em[i]) / (2.0 * h);
            }
            for i in 0..mi {
                jac_ineq[(i, j)] = (ip[i] - im[i]) / (2.0 * h);
            }
        }
    }
}

impl<P: NlpProblem + ?Sized> NlpProblem for &P {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn num_eq(&self) -> usize {
        (**self).num_eq()
    }
    fn num_ineq(&self) -> usize {
        (**self).num_ineq()
    }
    fn sense(&self) -> Sense {
        (**self).sense()
    }
    fn bounds(&self) -> Bounds {
        (**self).bounds()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (**self).objective(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (**self).gradient(x, grad)
    }
    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        (**self).constraints(x, eq, ineq)
    }
    fn constraint_jacobian(&self, x: &[f64], jac_eq: &mut DMatrix<f64>, jac_ineq: &mut DMatrix<f64>) {
        (**self).constraint_jacobian(x, jac_eq, jac_ineq)
    }
}

/// Finite-difference step for a coordinate of magnitude `|x|`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &mut [f64]) {
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        grad[j] = (fp - fm) / (2.0 * h);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Scaled KKT stationarity tolerance.
    pub optimality: f64,
    /// Constraint violation tolerance.
    pub feasibility: f64,
    pub max_iterations: usize,
    /// `|h_I(x*)| <= active` marks an inequality as active.
    pub active: f64,
    /// Active constraints with `|nu| < weak_multiplier` are weakly active.
    pub weak_multiplier: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            optimality: 1e-8,
            feasibility: 1e-8,
            max_iterations: 300,
            active: 1e-7,
            weak_multiplier: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Status {
    Converged,
    MaxIterations,
    /// The line search could not make progress; `x` is the best iterate.
    StepCollapse,
    /// The linearized constraints stayed inconsistent.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    /// Signed bound multipliers (`> 0` at an upper bound for minimization).
    pub bound_multipliers: Vec<f64>,
    pub status: Status,
    pub kkt_residual: f64,
    pub constraint_violation: f64,
    pub iterations: usize,
}

impl NlpSolution {
    pub fn is_converged(&self) -> bool {
        self.status == Status::Converged
    }

    /// Indices of inequalities that are active with a multiplier large
    /// enough to enter a sensitivity system.
    pub fn strongly_active(&self, problem: &dyn NlpProblem, tol: &Tolerances) -> Vec<usize> {
        let mut eq = vec![0.0; problem.num_eq()];
        let mut ineq = vec![0.0; problem.num_ineq()];
        problem.constraints(&self.x, &mut eq, &mut ineq);
        ineq.iter()
            .enumerate()
            .filter(|(i, h)| h.abs() <= tol.active && self.ineq_multipliers[*i].abs() >= tol.weak_multiplier)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Signed distance measure used for ordering solutions: smaller is better.
pub(crate) fn merit_value(sense: Sense, objective: f64) -> f64 {
    sense.sign() * objective
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sense_ordering() {
        assert!(Sense::Minimize.better(1.0, 2.0));
        assert!(Sense::Maximize.better(2.0, 1.0));
    }

    #[test]
    fn bounds_projection() {
        let b = Bounds::new(vec![0.0, -1.0], vec![1.0, 1.0]);
        let mut x = [2.0, -3.0];
        b.project(&mut x);
        assert_eq!(x, [1.0, -1.0]);
        assert!(b.contains(&x));
    }
}
