//! Optimal sampling designs `U = {u_1, ..., u_N}`.
//!
//! * classical: trace / determinant / largest eigenvalue of `FIM^-1`;
//! * exact (nested): outer projected BFGS on the exact criterion with
//!   certified lower-level geometry and sensitivity gradients;
//! * exact A (KKT): single-level program with the anchor problems replaced
//!   by their optimality conditions;
//! * ellipsoidal D: `(k_out^(n-1) + k_in^(n-1)) det(FIM^-1)`.
//!
//! Designs are stored flat (`N * n_u` values, sample-major) and reported
//! sorted, so repeated sampling inputs simply coincide.

mod classical;
mod fiacco;
mod kkt;
mod nested;
mod upper;

pub use classical::{classical_criterion, classical_design};
pub use fiacco::{fiacco_sensitivity, resolve_sensitivity, sensitivity, Sensitivity, SensitivityMethod};
pub use kkt::exact_a_design_kkt;
pub use nested::{
    ellipsoidal_d_design, ellipsoidal_objective, exact_design_nested, outer_gradient, ray_volume_gradient,
};

use core::cmp::Ordering;

use nalgebra::DMatrix;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::estimation::{exact_cr_threshold, information_matrix, ConfidenceRegion, Dataset, Noise};
use crate::geometry::{
    anchor_points_with, bounding_orthotope, farthest_pair_with, grid_volume_with_budget, AnchorSet, Certificate,
    FarthestPair, GeometrySettings, GridVolume, RegionContext, DEFAULT_NODE_BUDGET,
};
use crate::model::{jacobian_into, ModelRef};
use crate::nlp::Bounds;
use crate::prelude::*;
use crate::stats::TWO_SIGMA_ALPHA;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Criterion {
    #[cfg_attr(feature = "serde", serde(alias = "a"))]
    A,
    #[cfg_attr(feature = "serde", serde(alias = "d"))]
    D,
    #[cfg_attr(feature = "serde", serde(alias = "e"))]
    E,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::A => "A",
            Criterion::D => "D",
            Criterion::E => "E",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    Classical,
    Exact,
    /// Exact A through the single-level KKT program.
    Kkt,
    /// D only.
    Ellipsoidal,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Classical => "classical",
            Method::Exact => "exact",
            Method::Kkt => "kkt",
            Method::Ellipsoidal => "ellipsoidal",
        }
    }
}

impl core::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(Criterion::A),
            "d" | "D" => Ok(Criterion::D),
            "e" | "E" => Ok(Criterion::E),
            other => Err(Error::InvalidArgument(format!("unknown criterion `{other}`"))),
        }
    }
}

impl core::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(Method::Classical),
            "exact" | "nested" => Ok(Method::Exact),
            "kkt" => Ok(Method::Kkt),
            "ellipsoidal" => Ok(Method::Ellipsoidal),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Measurement noise assumed at design time.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignNoise {
    /// Known per-output standard deviations; chi-squared threshold.
    Known(Vec<f64>),
    /// Unknown variance with design-time surrogate `s2`; Fisher threshold.
    Unknown { s2: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSettings {
    /// Final (reported) lower-level geometry.
    pub geometry: GeometrySettings,
    /// Verification grid resolution inside outer iterations.
    pub inner_grid_resolution: usize,
    /// Grid spacing of the volume estimate.
    pub epsilon: f64,
    pub node_budget: u64,
    pub step_tol: f64,
    pub copy_tol: f64,
    pub gradient_tol: f64,
    pub max_iterations: usize,
    /// Perturbed restarts around the classical optimum.
    pub restarts: usize,
    /// Restart amplitude as a fraction of the input range.
    pub restart_spread: f64,
    /// Quasi-random starts of the classical designs.
    pub classical_starts: usize,
    /// Log-sum-exp sharpness of the smoothed classical E criterion.
    pub e_sharpness: f64,
    pub saddle_probes: usize,
    pub saddle_radius: f64,
    pub saddle_tol: f64,
    /// Complementarity relaxation schedule of the KKT program.
    pub kkt_mu_start: f64,
    pub kkt_mu_final: f64,
    pub seed: u64,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            geometry: GeometrySettings::default(),
            inner_grid_resolution: 160,
            epsilon: 5e-3,
            node_budget: DEFAULT_NODE_BUDGET,
            step_tol: 1e-6,
            copy_tol: 1e-6,
            gradient_tol: 1e-5,
            max_iterations: 200,
            restarts: 8,
            restart_spread: 0.05,
            classical_starts: 32,
            e_sharpness: 1e3,
            saddle_probes: 5,
            saddle_radius: 1e-3,
            saddle_tol: 1e-6,
            kkt_mu_start: 1e-2,
            kkt_mu_final: 1e-9,
            seed: 0,
        }
    }
}

/// One design task.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub model: ModelRef,
    pub p_hat: Vec<f64>,
    pub criterion: Criterion,
    pub method: Method,
    pub n_samples: usize,
    pub input_bounds: Bounds,
    pub alpha: f64,
    pub noise: DesignNoise,
    /// Parameter search box of the lower levels; defaults to `[p/10, 10 p]`.
    pub search_box: Option<Bounds>,
    pub settings: DesignSettings,
}

impl DesignProblem {
    /// Problem with the model's natural input bounds and `alpha = 0.9545`.
    pub fn new(
        model: ModelRef,
        p_hat: &[f64],
        criterion: Criterion,
        method: Method,
        n_samples: usize,
        noise: DesignNoise,
    ) -> Result<Self> {
        let input_bounds = match model.input_bounds() {
            Some((lo, hi)) => Bounds::new(lo, hi),
            None => return Err(Error::InvalidArgument("model has no natural input bounds".to_string())),
        };
        let problem = Self {
            model,
            p_hat: p_hat.to_vec(),
            criterion,
            method,
            n_samples,
            input_bounds,
            alpha: TWO_SIGMA_ALPHA,
            noise,
            search_box: None,
            settings: DesignSettings::default(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if self.p_hat.len() != m.num_params() {
            return Err(Error::DimensionMismatch {
                what: "p_hat",
                expected: m.num_params(),
                found: self.p_hat.len(),
            });
        }
        m.check_params(&self.p_hat)?;
        if self.input_bounds.len() != m.num_inputs() || !self.input_bounds.is_finite() {
            return Err(Error::InvalidArgument(
                "input bounds must be finite, one per input".to_string(),
            ));
        }
        if self
            .input_bounds
            .lower
            .iter()
            .zip(&self.input_bounds.upper)
            .any(|(l, u)| !(l < u))
        {
            return Err(Error::InvalidArgument("input bounds need lower < upper".to_string()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("at least one sample is needed".to_string()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1)".to_string()));
        }
        match &self.noise {
            DesignNoise::Known(s) => {
                if s.len() != m.num_outputs() || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "sigma must be positive, one per output".to_string(),
                    ));
                }
            }
            DesignNoise::Unknown { s2 } => {
                if !(*s2 > 0.0) || !s2.is_finite() {
                    return Err(Error::InvalidArgument("s2 must be positive".to_string()));
                }
                if self.n_samples <= m.num_params() {
                    return Err(Error::Degenerate(format!(
                        "unknown variance needs N > n_p (N = {}, n_p = {})",
                        self.n_samples,
                        m.num_params()
                    )));
                }
            }
        }
        if self.method == Method::Ellipsoidal && self.criterion != Criterion::D {
            return Err(Error::InvalidArgument(
                "the ellipsoidal method is a D design".to_string(),
            ));
        }
        if self.method == Method::Kkt && self.criterion != Criterion::A {
            return Err(Error::InvalidArgument("the KKT method is an A design".to_string()));
        }
        if let Some(b) = &self.search_box {
            if b.len() != self.p_hat.len() || !b.is_finite() || !b.contains(&self.p_hat) {
                return Err(Error::InvalidArgument(
                    "search box must be finite and contain p_hat".to_string(),
                ));
            }
        }
        let s = &self.settings;
        if !(s.epsilon > 0.0) || s.max_iterations == 0 || s.geometry.rays < 2 {
            return Err(Error::InvalidArgument("invalid design settings".to_string()));
        }
        Ok(())
    }

    pub fn num_variables(&self) -> usize {
        self.n_samples * self.model.num_inputs()
    }

    /// Exact region of the noise-free data at `u` (flat design).
    pub fn region(&self, u: &[f64]) -> Result<ConfidenceRegion> {
        Space::new(self)?.region(u)
    }

    /// Exact region at `u` from the measurements `y(p_hat, u) + e` (`e` flat,
    /// sample-major). Threshold and `s2` keep their design-time values.
    pub fn region_with_errors(&self, u: &[f64], errors: &[f64]) -> Result<ConfidenceRegion> {
        Space::new(self)?.region_with(u, Some(errors))
    }

    /// Exact `criterion` at `u` with this problem's settings, for noise-free
    /// data or with measurement errors.
    pub fn score(&self, u: &[f64], criterion: Criterion, errors: Option<&[f64]>) -> Result<ExactEvaluation> {
        let cr = Space::new(self)?.region_with(u, errors)?;
        let s = &self.settings;
        evaluate_exact(&cr, criterion, s.epsilon, s.node_budget, &s.geometry)
    }

    /// Design-time Fisher information at `u`.
    pub fn information(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        Ok(Space::new(self)?.fim(u))
    }
}

/// Exact criterion value of one region with its certificates.
#[derive(Debug, Clone)]
pub struct ExactEvaluation {
    pub criterion: Criterion,
    pub value: f64,
    pub anchors: AnchorSet,
    pub pair: Option<FarthestPair>,
    pub volume: Option<GridVolume>,
    pub certificates: Vec<Certificate>,
}

/// `phi_A`, gridded `phi_D` (spacing `epsilon`) or `phi_E` of `cr`.
pub fn evaluate_exact(
    cr: &ConfidenceRegion,
    criterion: Criterion,
    epsilon: f64,
    node_budget: u64,
    geometry: &GeometrySettings,
) -> Result<ExactEvaluation> {
    let ctx = RegionContext::new(cr, geometry)?;
    let anchors = anchor_points_with(cr, &ctx, geometry, None)?;
    let mut certificates = anchors.certificates.clone();
    let (value, pair, volume) = match criterion {
        Criterion::A => (anchors.phi_a, None, None),
        Criterion::D => {
            let v = grid_volume_with_budget(cr, &bounding_orthotope(&anchors), epsilon, node_budget)?;
            (v.phi_d_hat, None, Some(v))
        }
        Criterion::E => {
            let p = farthest_pair_with(cr, &ctx, Some(&anchors), geometry, None)?;
            certificates.push(p.certificate.clone());
            (p.phi_e, Some(p), None)
        }
    };
    Ok(ExactEvaluation {
        criterion,
        value,
        anchors,
        pair,
        volume,
        certificates,
    })
}

/// Outcome of one design solve.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DesignResult {
    pub criterion: Criterion,
    pub method: Method,
    #[cfg_attr(feature = "serde", serde(rename = "N"))]
    pub n: usize,
    /// Sorted sampling inputs, one entry per sample.
    #[cfg_attr(feature = "serde", serde(rename = "U_star"))]
    pub u_star: Vec<Vec<f64>>,
    /// Exact criterion at `u_star` (gridded for D).
    pub objective_exact: f64,
    /// The objective the method optimized: classical criterion, ellipsoidal
    /// objective, ray-volume estimate or the exact value itself.
    pub objective_surrogate: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Lower-level certificates of the final evaluation.
    pub certificates: Vec<Certificate>,
    pub seed: u64,
    /// Wall time; filled in by callers with a clock.
    pub runtime_s: f64,
}

impl DesignResult {
    /// Flat sample-major design.
    pub fn flat(&self) -> Vec<f64> {
        self.u_star.concat()
    }
}

/// Run from one start, before selection.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Sorted flat design.
    pub u: Vec<f64>,
    pub objective_exact: f64,
    pub objective_surrogate: f64,
    pub iterations: usize,
    pub converged: bool,
    pub certificates: Vec<Certificate>,
}

/// Starts of the outer optimization for `problem.method`.
pub fn initial_designs(problem: &DesignProblem) -> Result<Vec<Vec<f64>>> {
    problem.validate()?;
    let space = Space::new(problem)?;
    match problem.method {
        Method::Classical => Ok(classical::starts(&space)),
        _ => {
            let base = classical::classical_optimum(&space, problem.criterion)?;
            Ok(space.perturbed_starts(&base.u))
        }
    }
}

/// Runs the outer optimization of `problem.method` from `start`.
pub fn run_from_start(problem: &DesignProblem, start: &[f64]) -> Result<Candidate> {
    let space = Space::new(problem)?;
    if start.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            what: "start design",
            expected: space.dim(),
            found: start.len(),
        });
    }
    match problem.method {
        Method::Classical => classical::run(&space, problem.criterion, start),
        Method::Exact => nested::run_exact(&space, problem.criterion, start),
        Method::Ellipsoidal => nested::run_ellipsoidal(&space, start),
        Method::Kkt => kkt::run(&space, start),
    }
}

/// Picks the best candidate and assembles the result. Candidates within a
/// relative `1e-8` of the best are ranked by their sorted design.
pub fn finish(problem: &DesignProblem, candidates: Vec<Result<Candidate>>) -> Result<DesignResult> {
    let by_surrogate = matches!(problem.method, Method::Classical | Method::Ellipsoidal);
    let mut ok = Vec::new();
    let mut first_err = None;
    for c in candidates {
        match c {
            Ok(c) => ok.push(c),
            Err(e) => {
                // Verification failures outrank plain solver failures.
                if first_err.is_none()
                    || (e.is_verification() && !first_err.as_ref().is_some_and(Error::is_verification))
                {
                    first_err = Some(e);
                }
            }
        }
    }
    let key = |c: &Candidate| {
        if by_surrogate {
            c.objective_surrogate
        } else {
            c.objective_exact
        }
    };
    let Some(best) = select(&ok, key) else {
        return Err(first_err.unwrap_or(Error::AllStartsFailed(0)));
    };
    let mut best = best.clone();
    let space = Space::new(problem)?;
    if problem.method == Method::Classical || problem.method == Method::Ellipsoidal {
        let cr = space.region(&best.u)?;
        let eval = evaluate_exact(
            &cr,
            problem.criterion,
            problem.settings.epsilon,
            problem.settings.node_budget,
            &problem.settings.geometry,
        )?;
        best.objective_exact = eval.value;
        best.certificates = eval.certificates;
    }
    Ok(DesignResult {
        criterion: problem.criterion,
        method: problem.method,
        n: problem.n_samples,
        u_star: space.samples(&best.u),
        objective_exact: best.objective_exact,
        objective_surrogate: best.objective_surrogate,
        iterations: best.iterations,
        converged: best.converged,
        certificates: best.certificates,
        seed: problem.settings.seed,
        runtime_s: 0.0,
    })
}

/// Solves `problem` sequentially from all its starts.
pub fn design(problem: &DesignProblem) -> Result<DesignResult> {
    let starts = initial_designs(problem)?;
    let candidates = starts.iter().map(|s| run_from_start(problem, s)).collect();
    finish(problem, candidates)
}

pub(crate) fn select(cands: &[Candidate], key: impl Fn(&Candidate) -> f64) -> Option<&Candidate> {
    let best = cands
        .iter()
        .map(&key)
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tol = 1e-8 * best.abs().max(f64::MIN_POSITIVE);
    // Optimizer noise must not decide between interchangeable designs.
    let scale = cands
        .iter()
        .flat_map(|c| c.u.iter())
        .fold(0.0, |m: f64, v| m.max(v.abs()));
    let eps = 1e-6 * scale.max(1.0);
    cands
        .iter()
        .filter(|c| key(c) <= best + tol)
        .min_by(|a, b| lex_cmp_tol(&a.u, &b.u, eps).then_with(|| key(a).total_cmp(&key(b))))
}

fn lex_cmp_tol(a: &[f64], b: &[f64], eps: f64) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > eps {
            return x.total_cmp(y);
        }
    }
    a.len().cmp(&b.len())
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Sorts the samples of a flat design lexicographically.
pub fn sort_design(u: &[f64], n_u: usize) -> Vec<f64> {
    let mut samples: Vec<&[f64]> = u.chunks(n_u.max(1)).collect();
    samples.sort_by(|a, b| lex_cmp(a, b));
    samples.concat()
}

/// Design-time quantities shared by all evaluations of one problem.
#[derive(Debug, Clone)]
pub(crate) struct Space<'a> {
    pub problem: &'a DesignProblem,
    pub threshold: f64,
    pub s2: Option<f64>,
    pub noise: Noise,
    /// Fisher information weights (`1/sigma^2` or `1/s2`).
    pub info_weights: Vec<f64>,
    /// Residual weights of the region objective (ones without a known sigma).
    pub residual_weights: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl<'a> Space<'a> {
    pub fn new(problem: &'a DesignProblem) -> Result<Self> {
        problem.validate()?;
        let n_y = problem.model.num_outputs();
        let n_p = problem.model.num_params();
        let (noise, s2, info_weights, residual_weights) = match &problem.noise {
            DesignNoise::Known(s) => {
                let w: Vec<f64> = s.iter().map(|v| 1.0 / (v * v)).collect();
                (Noise::KnownSigma(s.clone()), None, w.clone(), w)
            }
            DesignNoise::Unknown { s2 } => (Noise::UnknownVariance, Some(*s2), vec![1.0 / s2; n_y], vec![1.0; n_y]),
        };
        let threshold = exact_cr_threshold(&noise, problem.alpha, n_p, problem.n_samples, s2.unwrap_or(0.0))?;
        let n = problem.n_samples;
        let lo = problem.input_bounds.lower.repeat(n);
        let hi = problem.input_bounds.upper.repeat(n);
        Ok(Self {
            problem,
            threshold,
            s2,
            noise,
            info_weights,
            residual_weights,
            lo,
            hi,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_u(&self) -> usize {
        self.problem.model.num_inputs()
    }

    pub fn samples(&self, u: &[f64]) -> Vec<Vec<f64>> {
        u.chunks(self.n_u().max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn region(&self, u: &[f64]) -> Result<ConfidenceRegion> {
        self.region_with(u, None)
    }

    pub fn region_with(&self, u: &[f64], errors: Option<&[f64]>) -> Result<ConfidenceRegion> {
        let p = self.problem;
        let mut ds = Dataset::noise_free(p.model.as_ref(), &p.p_hat, &self.samples(u), self.noise.clone())?;
        if let Some(e) = errors {
            let n_y = p.model.num_outputs();
            if e.len() != ds.len() * n_y {
                return Err(Error::DimensionMismatch {
                    what: "measurement errors",
                    expected: ds.len() * n_y,
                    found: e.len(),
                });
            }
            let y: Vec<Vec<f64>> = ds
                .outputs()
                .iter()
                .zip(e.chunks(n_y))
                .map(|(y, e)| y.iter().zip(e).map(|(a, b)| a + b).collect())
                .collect();
            ds = ds.with_outputs(&y)?;
        }
        let cr =
            ConfidenceRegion::with_known_threshold(p.model.clone(), ds, &p.p_hat, p.alpha, self.s2, self.threshold)?;
        match &p.search_box {
            Some(b) => cr.with_search_box(b.clone()),
            None => Ok(cr),
        }
    }

    pub fn fim(&self, u: &[f64]) -> DMatrix<f64> {
        information_matrix(self.problem.model.as_ref(), &self.problem.p_hat, u, &self.info_weights)
    }

    /// `dFIM/du_k` for every design variable.
    pub fn fim_derivatives(&self, u: &[f64]) -> Vec<DMatrix<f64>> {
        let model = self.problem.model.as_ref();
        let p = &self.problem.p_hat;
        let n_p = model.num_params();
        let n_y = model.num_outputs();
        let n_u = self.n_u();
        let mut out = Vec::with_capacity(u.len());
        let mut s = vec![0.0; n_y * n_p];
        let mut sp = vec![0.0; n_y * n_p];
        let mut sm = vec![0.0; n_y * n_p];
        for (k, uk) in u.iter().enumerate() {
            let tau = k / n_u;
            let mut x = u[tau * n_u..(tau + 1) * n_u].to_vec();
            jacobian_into(model, p, &x, &mut s);
            let h = 1e-6 * uk.abs().max(1.0);
            x[k % n_u] = uk + h;
            jacobian_into(model, p, &x, &mut sp);
            x[k % n_u] = uk - h;
            jacobian_into(model, p, &x, &mut sm);
            let mut d = DMatrix::zeros(n_p, n_p);
            for i in 0..n_y {
                let w = self.info_weights[i];
                for a in 0..n_p {
                    for b in 0..n_p {
                        let da = (sp[i * n_p + a] - sm[i * n_p + a]) / (2.0 * h);
                        let db = (sp[i * n_p + b] - sm[i * n_p + b]) / (2.0 * h);
                        d[(a, b)] += w * (da * s[i * n_p + b] + s[i * n_p + a] * db);
                    }
                }
            }
            out.push(d);
        }
        out
    }

    /// `d excess(p; U) / dU` for noise-free design data.
    pub fn excess_input_gradient(&self, u: &[f64], p: &[f64]) -> Vec<f64> {
        let model = self.problem.model.as_ref();
        let p_hat = &self.problem.p_hat;
        let n_u = self.n_u();
        let n_y = model.num_outputs();
        let mut yh = vec![0.0; n_y];
        let mut yp = vec![0.0; n_y];
        let mut a = vec![0.0; n_y];
        let mut b = vec![0.0; n_y];
        let mut grad = vec![0.0; u.len()];
        for (k, uk) in u.iter().enumerate() {
            let tau = k / n_u;
            let mut x = u[tau * n_u..(tau + 1) * n_u].to_vec();
            model.eval_into(p_hat, &x, &mut yh);
            model.eval_into(p, &x, &mut yp);
            let h = 1e-6 * uk.abs().max(1.0);
            x[k % n_u] = uk + h;
            model.eval_into(p_hat, &x, &mut a);
            model.eval_into(p, &x, &mut b);
            let mut dplus = vec![0.0; n_y];
            for i in 0..n_y {
                dplus[i] = a[i] - b[i];
            }
            x[k % n_u] = uk - h;
            model.eval_into(p_hat, &x, &mut a);
            model.eval_into(p, &x, &mut b);
            grad[k] = (0..n_y)
                .map(|i| {
                    let dr = (dplus[i] - (a[i] - b[i])) / (2.0 * h);
                    2.0 * self.residual_weights[i] * (yh[i] - yp[i]) * dr
                })
                .sum();
        }
        grad
    }

    /// Equispaced interior design: sample `tau` at `(tau + 1/2) / N` of each
    /// input range.
    pub fn equispaced(&self) -> Vec<f64> {
        let n = self.problem.n_samples;
        let b = &self.problem.input_bounds;
        let mut u = Vec::with_capacity(self.dim());
        for tau in 0..n {
            for j in 0..self.n_u() {
                u.push(b.lower[j] + (tau as f64 + 0.5) / n as f64 * (b.upper[j] - b.lower[j]));
            }
        }
        u
    }

    /// `base`, the equispaced design and `restarts` further starts: first the
    /// redistributions of the samples over the distinct values of `base`
    /// (repeat counts are what local steps cannot change), then seeded
    /// uniform perturbations of `base`.
    pub fn perturbed_starts(&self, base: &[f64]) -> Vec<Vec<f64>> {
        let s = &self.problem.settings;
        let n_u = self.n_u();
        let mut starts = vec![base.to_vec(), self.equispaced()];
        let range = (0..self.dim()).map(|k| self.hi[k] - self.lo[k]).fold(0.0, f64::max);
        let mut clusters: Vec<&[f64]> = Vec::new();
        for sample in base.chunks(n_u) {
            if !clusters
                .iter()
                .any(|c| c.iter().zip(sample).all(|(a, b)| (a - b).abs() <= 1e-3 * range))
            {
                clusters.push(sample);
            }
        }
        let n = self.problem.n_samples;
        for counts in compositions(n, clusters.len()) {
            if starts.len() >= 2 + s.restarts {
                break;
            }
            let u: Vec<f64> = counts.iter().zip(&clusters).flat_map(|(c, v)| v.repeat(*c)).collect();
            if starts.iter().all(|x| self.sorted(x) != u) {
                starts.push(u);
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(s.seed);
        while starts.len() < 2 + s.restarts {
            let u: Vec<f64> = (0..self.dim())
                .map(|k| {
                    let r = unit(&mut rng) * 2.0 - 1.0;
                    (base[k] + r * s.restart_spread * (self.hi[k] - self.lo[k])).clamp(self.lo[k], self.hi[k])
                })
                .collect();
            starts.push(u);
        }
        starts
    }

    /// Seeded probe directions of the saddle guard.
    pub fn probes(&self, salt: u64) -> Vec<Vec<f64>> {
        let s = &self.problem.settings;
        let mut rng = ChaCha20Rng::seed_from_u64(s.seed ^ 0x5ad_d1e);
        rng.set_stream(salt);
        (0..s.saddle_probes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim()).map(|_| unit(&mut rng) * 2.0 - 1.0).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                v.into_iter().map(|x| x * s.saddle_radius / norm).collect()
            })
            .collect()
    }

    pub fn sorted(&self, u: &[f64]) -> Vec<f64> {
        sort_design(u, self.n_u())
    }

    pub fn upper_options(&self) -> upper::UpperOptions {
        let s = &self.problem.settings;
        upper::UpperOptions {
            step_tol: s.step_tol,
            copy_tol: s.copy_tol,
            gradient_tol: s.gradient_tol,
            max_iterations: s.max_iterations,
        }
    }

    /// Cheaper geometry used inside outer iterations.
    pub fn inner_geometry(&self) -> GeometrySettings {
        let g = &self.problem.settings.geometry;
        GeometrySettings {
            n_starts: 0,
            grid_resolution: self.problem.settings.inner_grid_resolution.min(g.grid_resolution),
            ..g.clone()
        }
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<ExactEvaluation> {
        let s = &self.problem.settings;
        evaluate_exact(
            &self.region(u)?,
            self.problem.criterion,
            s.epsilon,
            s.node_budget,
            &s.geometry,
        )
    }
}

/// All ways to write `n` as an ordered sum of `m` positive counts.
fn compositions(n: usize, m: usize) -> Vec<Vec<usize>> {
    if m == 0 || n < m {
        return Vec::new();
    }
    if m == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 1..=n - m + 1 {
        for mut rest in compositions(n - first, m - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Uniform draw in `[0, 1)`.
fn unit(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_bod;
    use alloc::sync::Arc;

    fn bod(n: usize) -> DesignProblem {
        DesignProblem::new(
            Arc::new(builtin_bod()),
            &[2.5, 0.5],
            Criterion::A,
            Method::Classical,
            n,
            DesignNoise::Unknown { s2: 0.01 },
        )
        .unwrap()
    }

    #[test]
    fn compositions_enumerate() {
        assert_eq!(compositions(4, 2), vec![vec![1, 3], vec![2, 2], vec![3, 1]]);
        assert_eq!(compositions(5, 3).len(), 6);
        assert!(compositions(2, 3).is_empty());
    }

    #[test]
    fn restarts_redistribute_clusters() {
        let p = bod(4);
        let space = Space::new(&p).unwrap();
        let starts = space.perturbed_starts(&[1.8, 20.0, 20.0, 20.0]);
        assert_eq!(starts.len(), 10);
        assert!(starts.contains(&vec![1.8, 1.8, 20.0, 20.0]));
        assert!(starts.contains(&vec![1.8, 1.8, 1.8, 20.0]));
    }

    #[test]
    fn sorting_is_lexicographic() {
        assert_eq!(sort_design(&[3.0, 1.0, 2.0], 1), vec![1.0, 2.0, 3.0]);
        assert_eq!(
            sort_design(&[1.0, 5.0, 1.0, 2.0, 0.0, 9.0], 2),
            vec![0.0, 9.0, 1.0, 2.0, 1.0, 5.0]
        );
    }

    #[test]
    fn threshold_and_region() {
        let p = bod(4);
        let space = Space::new(&p).unwrap();
        assert!((space.threshold - 0.41956).abs() < 1e-4);
        let cr = space.region(&[1.0, 2.0, 20.0, 20.0]).unwrap();
        assert!(cr.excess(&[2.5, 0.5]) < 0.0);
    }

    #[test]
    fn fim_derivatives_match_differences() {
        let p = bod(4);
        let space = Space::new(&p).unwrap();
        let u = [1.3, 2.7, 9.0, 20.0];
        let d = space.fim_derivatives(&u);
        for k in 0..4 {
            let h = 1e-5;
            let mut up = u;
            up[k] += h;
            let mut um = u;
            um[k] -= h;
            let fd = (space.fim(&up) - space.fim(&um)) / (2.0 * h);
            assert!((&fd - &d[k]).amax() < 1e-5 * fd.amax().max(1.0), "{k}");
        }
    }

    #[test]
    fn excess_input_gradient_matches_differences() {
        let p = bod(4);
        let space = Space::new(&p).unwrap();
        let u = [1.3, 2.7, 9.0, 19.0];
        let q = [2.7, 0.42];
        let g = space.excess_input_gradient(&u, &q);
        for k in 0..4 {
            let h = 1e-5;
            let mut up = u;
            up[k] += h;
            let mut um = u;
            um[k] -= h;
            let fd = (space.region(&up).unwrap().excess(&q) - space.region(&um).unwrap().excess(&q)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * fd.abs().max(1.0), "{k}: {fd} {}", g[k]);
        }
    }

    #[test]
    fn selection_breaks_ties_by_design() {
        let c = |u: Vec<f64>, v: f64| Candidate {
            u,
            objective_exact: v,
            objective_surrogate: v,
            iterations: 0,
            converged: true,
            certificates: Vec::new(),
        };
        let cands = vec![
            c(vec![2.0, 10.0, 10.0], 1.0),
            c(vec![2.0, 2.0, 10.0], 1.0 + 1e-12),
            c(vec![0.5, 1.0, 1.0], 2.0),
        ];
        let best = select(&cands, |c| c.objective_exact).unwrap();
        assert_eq!(best.u, vec![2.0, 2.0, 10.0]);
    }
}
