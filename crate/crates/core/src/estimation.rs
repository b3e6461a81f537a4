//! Least-squares objectives, Fisher information, confidence thresholds and
//! exact confidence-region membership.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::model::{jacobian_into, Model, ModelRef};
use crate::nlp::{self, Bounds, NlpProblem, NlpSolution, Tolerances};
use crate::prelude::*;
use crate::stats::{chi2_quantile, f_quantile};
use crate::{Error, Result};

/// Measurement noise description.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Noise {
    /// Known standard deviation per output; the weighted objective applies.
    KnownSigma(Vec<f64>),
    /// Unknown variance; the unweighted objective and an F threshold apply.
    UnknownVariance,
}

impl Noise {
    pub fn is_known(&self) -> bool {
        matches!(self, Noise::KnownSigma(_))
    }
}

/// Ordered samples `(u_tau, y_m(tau))` with their noise description.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_u: usize,
    n_y: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    noise: Noise,
}

impl Dataset {
    pub fn new(inputs: &[Vec<f64>], outputs: &[Vec<f64>], noise: Noise) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one sample".to_string()));
        }
        if inputs.len() != outputs.len() {
            return Err(Error::DimensionMismatch {
                what: "outputs per sample",
                expected: inputs.len(),
                found: outputs.len(),
            });
        }
        let n_u = inputs[0].len();
        let n_y = outputs[0].len();
        for (u, y) in inputs.iter().zip(outputs) {
            if u.len() != n_u {
                return Err(Error::DimensionMismatch {
                    what: "sample inputs",
                    expected: n_u,
                    found: u.len(),
                });
            }
            if y.len() != n_y {
                return Err(Error::DimensionMismatch {
                    what: "sample outputs",
                    expected: n_y,
                    found: y.len(),
                });
            }
        }
        if let Noise::KnownSigma(s) = &noise {
            if s.len() != n_y {
                return Err(Error::DimensionMismatch {
                    what: "noise sigma",
                    expected: n_y,
                    found: s.len(),
                });
            }
            if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument("sigma must be finite and >= 0".to_string()));
            }
        }
        let inputs: Vec<f64> = inputs.concat();
        let outputs: Vec<f64> = outputs.concat();
        if inputs.iter().chain(&outputs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self {
            n_u,
            n_y,
            inputs,
            outputs,
            noise,
        })
    }

    /// Outputs simulated without noise at `p`, the design-time assumption of
    /// no plant-model mismatch.
    pub fn noise_free(model: &dyn Model, p: &[f64], design: &[Vec<f64>], noise: Noise) -> Result<Self> {
        let outputs = design
            .iter()
            .map(|u| crate::model::evaluate_model(model, p, u))
            .collect::<Result<Vec<_>>>()?;
        Self::new(design, &outputs, noise)
    }

    /// The same inputs and noise with new outputs.
    pub fn with_outputs(&self, outputs: &[Vec<f64>]) -> Result<Self> {
        Self::new(&self.inputs(), outputs, self.noise.clone())
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.n_u.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_inputs(&self) -> usize {
        self.n_u
    }

    pub fn num_outputs(&self) -> usize {
        self.n_y
    }

    pub fn noise(&self) -> &Noise {
        &self.noise
    }

    pub fn input(&self, tau: usize) -> &[f64] {
        &self.inputs[tau * self.n_u..(tau + 1) * self.n_u]
    }

    pub fn output(&self, tau: usize) -> &[f64] {
        &self.outputs[tau * self.n_y..(tau + 1) * self.n_y]
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|t| self.input(t).to_vec()).collect()
    }

    pub fn outputs(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|t| self.output(t).to_vec()).collect()
    }

    fn check_model(&self, model: &dyn Model) -> Result<()> {
        if model.num_inputs() != self.n_u {
            return Err(Error::DimensionMismatch {
                what: "dataset inputs",
                expected: model.num_inputs(),
                found: self.n_u,
            });
        }
        if model.num_outputs() != self.n_y {
            return Err(Error::DimensionMismatch {
                what: "dataset outputs",
                expected: model.num_outputs(),
                found: self.n_y,
            });
        }
        Ok(())
    }
}

/// Per-output residual weights: `1/sigma^2` for the weighted objective, ones
/// otherwise.
fn residual_weights(dataset: &Dataset, weighted: bool) -> Result<Vec<f64>> {
    if !weighted {
        return Ok(vec![1.0; dataset.n_y]);
    }
    match &dataset.noise {
        Noise::KnownSigma(s) => s
            .iter()
            .map(|v| {
                if *v > 0.0 {
                    Ok(1.0 / (v * v))
                } else {
                    Err(Error::InvalidArgument("weighted objective with sigma = 0".to_string()))
                }
            })
            .collect(),
        Noise::UnknownVariance => Err(Error::InvalidArgument(
            "weighted objective needs a known sigma".to_string(),
        )),
    }
}

/// `sum_tau sum_i w_i (y_i,m - y_i(p))^2`; `+inf` when the model leaves its
/// domain or overflows.
fn weighted_sse(model: &dyn Model, inputs: &[f64], outputs: &[f64], weights: &[f64], p: &[f64]) -> f64 {
    if model.check_params(p).is_err() {
        return f64::INFINITY;
    }
    let n_u = model.num_inputs();
    let n_y = model.num_outputs();
    let n = outputs.len() / n_y;
    let mut y = vec![0.0; n_y];
    let mut total = 0.0;
    for t in 0..n {
        model.eval_into(p, &inputs[t * n_u..(t + 1) * n_u], &mut y);
        for i in 0..n_y {
            let r = outputs[t * n_y + i] - y[i];
            total += weights[i] * r * r;
        }
    }
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Gradient of [`weighted_sse`] in `p`; returns the value.
fn weighted_sse_gradient(
    model: &dyn Model,
    inputs: &[f64],
    outputs: &[f64],
    weights: &[f64],
    p: &[f64],
    grad: &mut [f64],
) -> f64 {
    let n_p = model.num_params();
    let n_u = model.num_inputs();
    let n_y = model.num_outputs();
    let n = outputs.len() / n_y;
    grad.iter_mut().for_each(|g| *g = 0.0);
    if model.check_params(p).is_err() {
        return f64::INFINITY;
    }
    let mut y = vec![0.0; n_y];
    let mut jac = vec![0.0; n_y * n_p];
    let mut total = 0.0;
    for t in 0..n {
        let u = &inputs[t * n_u..(t + 1) * n_u];
        model.eval_into(p, u, &mut y);
        jacobian_into(model, p, u, &mut jac);
        for i in 0..n_y {
            let r = outputs[t * n_y + i] - y[i];
            total += weights[i] * r * r;
            for j in 0..n_p {
                grad[j] -= 2.0 * weights[i] * r * jac[i * n_p + j];
            }
        }
    }
    total
}

/// Weighted (`J_w`) or unweighted (`J`) residual sum of squares at `p`.
pub fn residual_objective(model: &dyn Model, dataset: &Dataset, p: &[f64], weighted: bool) -> Result<f64> {
    dataset.check_model(model)?;
    if p.len() != model.num_params() {
        return Err(Error::DimensionMismatch {
            what: "parameters",
            expected: model.num_params(),
            found: p.len(),
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters"));
    }
    model.check_params(p)?;
    let weights = residual_weights(dataset, weighted)?;
    let j = weighted_sse(model, &dataset.inputs, &dataset.outputs, &weights, p);
    if j.is_finite() {
        Ok(j)
    } else {
        Err(Error::NonFinite("residual objective"))
    }
}

/// Fisher information of a design, with the parameter sensitivities
/// standing in for the regressor of a linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInformation {
    pub matrix: DMatrix<f64>,
    pub design: Vec<Vec<f64>>,
}

impl FisherInformation {
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.matrix)
    }
}

/// `sum_tau S^T diag(w) S` over a flat input list.
pub(crate) fn information_matrix(model: &dyn Model, p: &[f64], inputs: &[f64], weights: &[f64]) -> DMatrix<f64> {
    let n_p = model.num_params();
    let n_u = model.num_inputs();
    let n_y = model.num_outputs();
    let mut m = DMatrix::zeros(n_p, n_p);
    let mut jac = vec![0.0; n_y * n_p];
    for u in inputs.chunks(n_u.max(1)) {
        jacobian_into(model, p, u, &mut jac);
        for i in 0..n_y {
            let row = &jac[i * n_p..(i + 1) * n_p];
            for a in 0..n_p {
                for b in a..n_p {
                    let v = weights[i] * row[a] * row[b];
                    m[(a, b)] += v;
                    if a != b {
                        m[(b, a)] += v;
                    }
                }
            }
        }
    }
    m
}

/// `FIM = sum_tau S(u_tau)^T diag(sigma^-2) S(u_tau)` at `p`.
pub fn fisher_information(
    model: &dyn Model,
    p: &[f64],
    design: &[Vec<f64>],
    sigma: &[f64],
) -> Result<FisherInformation> {
    if sigma.len() != model.num_outputs() {
        return Err(Error::DimensionMismatch {
            what: "sigma",
            expected: model.num_outputs(),
            found: sigma.len(),
        });
    }
    if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument("sigma must be positive".to_string()));
    }
    for u in design {
        crate::model::param_jacobian(model, p, u)?;
    }
    let weights: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let matrix = information_matrix(model, p, &design.concat(), &weights);
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sensitivities"));
    }
    Ok(FisherInformation {
        matrix,
        design: design.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarianceEstimate {
    pub s2: f64,
    pub n: usize,
    pub n_p: usize,
}

/// `s^2 = J(p_hat) / (N - n_p)`.
pub fn variance_estimate(j_hat: f64, n: usize, n_p: usize) -> Result<VarianceEstimate> {
    if n <= n_p {
        return Err(Error::Degenerate(format!(
            "no residual degrees of freedom with N = {n}, n_p = {n_p}"
        )));
    }
    if !(j_hat >= 0.0) || !j_hat.is_finite() {
        return Err(Error::InvalidArgument("J(p_hat) must be finite and >= 0".to_string()));
    }
    Ok(VarianceEstimate {
        s2: j_hat / (n - n_p) as f64,
        n,
        n_p,
    })
}

/// Right-hand side of the exact region inequality: `chi2(alpha, n_p)` for a
/// known variance, `n_p s^2 F(alpha; n_p, N - n_p)` otherwise.
pub fn exact_cr_threshold(noise: &Noise, alpha: f64, n_p: usize, n: usize, s2: f64) -> Result<f64> {
    match noise {
        Noise::KnownSigma(_) => chi2_quantile(alpha, n_p as u32),
        Noise::UnknownVariance => {
            if n <= n_p {
                return Err(Error::Degenerate(format!(
                    "unknown variance needs N > n_p (N = {n}, n_p = {n_p})"
                )));
            }
            if !(s2 >= 0.0) || !s2.is_finite() {
                return Err(Error::InvalidArgument("s2 must be finite and >= 0".to_string()));
            }
            Ok(n_p as f64 * s2 * f_quantile(alpha, n_p as u32, (n - n_p) as u32)?)
        }
    }
}

/// `[p/10, 10 p]` per parameter (ordered for negative entries, `[-1, 1]` at 0).
pub fn default_search_box(p_hat: &[f64]) -> Bounds {
    let (lo, hi) = p_hat
        .iter()
        .map(|p| {
            if *p == 0.0 {
                (-1.0, 1.0)
            } else {
                let (a, b) = (p / 10.0, 10.0 * p);
                (a.min(b), a.max(b))
            }
        })
        .unzip();
    Bounds::new(lo, hi)
}

/// Membership verdict with the signed excess `J(p) - J(p_hat) - c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub excess: f64,
}

/// Everything needed to test exact confidence-region membership.
#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    model: ModelRef,
    dataset: Dataset,
    p_hat: Vec<f64>,
    alpha: f64,
    threshold: f64,
    weighted: bool,
    /// Scale `s^2` used by the linearization for an unknown variance.
    s2: Option<f64>,
    search_box: Bounds,
    weights: Vec<f64>,
    j_hat: f64,
}

impl ConfidenceRegion {
    /// Region around `p_hat` for `dataset`. With an unknown variance, `s2`
    /// overrides the residual estimate (the design-time convention).
    pub fn new(model: ModelRef, dataset: Dataset, p_hat: &[f64], alpha: f64, s2: Option<f64>) -> Result<Self> {
        dataset.check_model(model.as_ref())?;
        let n_p = model.num_params();
        let n = dataset.len();
        let weighted = dataset.noise.is_known();
        let j_hat = residual_objective(model.as_ref(), &dataset, p_hat, weighted)?;
        let s2 = match dataset.noise {
            Noise::KnownSigma(_) => None,
            Noise::UnknownVariance => Some(match s2 {
                Some(v) => v,
                None => variance_estimate(j_hat, n, n_p)?.s2,
            }),
        };
        let threshold = exact_cr_threshold(&dataset.noise, alpha, n_p, n, s2.unwrap_or(0.0))?;
        let weights = residual_weights(&dataset, weighted)?;
        Ok(Self {
            search_box: default_search_box(p_hat),
            model,
            dataset,
            p_hat: p_hat.to_vec(),
            alpha,
            threshold,
            weighted,
            s2,
            weights,
            j_hat,
        })
    }

    /// Region with a precomputed threshold; skips the quantile inversion on
    /// hot paths that rebuild regions for many designs of the same size.
    pub fn with_known_threshold(
        model: ModelRef,
        dataset: Dataset,
        p_hat: &[f64],
        alpha: f64,
        s2: Option<f64>,
        threshold: f64,
    ) -> Result<Self> {
        dataset.check_model(model.as_ref())?;
        let weighted = dataset.noise.is_known();
        let j_hat = residual_objective(model.as_ref(), &dataset, p_hat, weighted)?;
        let s2 = match dataset.noise {
            Noise::KnownSigma(_) => None,
            Noise::UnknownVariance => Some(match s2 {
                Some(v) => v,
                None => variance_estimate(j_hat, dataset.len(), p_hat.len())?.s2,
            }),
        };
        let weights = residual_weights(&dataset, weighted)?;
        Self {
            search_box: default_search_box(p_hat),
            model,
            dataset,
            p_hat: p_hat.to_vec(),
            alpha,
            threshold: 0.0,
            weighted,
            s2,
            weights,
            j_hat,
        }
        .with_threshold(threshold)
    }

    /// Keeps everything but replaces the threshold `c`.
    pub fn with_threshold(mut self, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument("threshold must be finite and >= 0".to_string()));
        }
        self.threshold = c;
        Ok(self)
    }

    pub fn with_search_box(mut self, search_box: Bounds) -> Result<Self> {
        if search_box.len() != self.p_hat.len() || !search_box.is_finite() || !search_box.contains(&self.p_hat) {
            return Err(Error::InvalidArgument(
                "search box must be finite and contain p_hat".to_string(),
            ));
        }
        self.search_box = search_box;
        Ok(self)
    }

    pub fn model(&self) -> &ModelRef {
        &self.model
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn num_params(&self) -> usize {
        self.p_hat.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn weighted(&self) -> bool {
        self.weighted
    }

    pub fn s2(&self) -> Option<f64> {
        self.s2
    }

    pub fn search_box(&self) -> &Bounds {
        &self.search_box
    }

    pub fn j_hat(&self) -> f64 {
        self.j_hat
    }

    /// `J(p)` or `J_w(p)`; `+inf` outside the model domain.
    pub fn objective(&self, p: &[f64]) -> f64 {
        weighted_sse(
            self.model.as_ref(),
            &self.dataset.inputs,
            &self.dataset.outputs,
            &self.weights,
            p,
        )
    }

    /// `J(p) - J(p_hat) - c`; `<= 0` inside the region.
    pub fn excess(&self, p: &[f64]) -> f64 {
        self.objective(p) - self.j_hat - self.threshold
    }

    /// Excess and its gradient in `p`.
    pub fn excess_gradient(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let j = weighted_sse_gradient(
            self.model.as_ref(),
            &self.dataset.inputs,
            &self.dataset.outputs,
            &self.weights,
            p,
            grad,
        );
        j - self.j_hat - self.threshold
    }

    /// Boundary tolerance on the excess.
    pub fn tolerance(&self) -> f64 {
        1e-9 * self.threshold.max(1.0)
    }

    pub fn membership(&self, p: &[f64]) -> Membership {
        let excess = self.excess(p);
        Membership {
            member: excess <= self.tolerance(),
            excess,
        }
    }

    /// Per-output weights of the linearized information matrix.
    fn information_weights(&self) -> Vec<f64> {
        match (&self.dataset.noise, self.s2) {
            (Noise::UnknownVariance, Some(s2)) if s2 > 0.0 => vec![1.0 / s2; self.dataset.n_y],
            (Noise::UnknownVariance, _) => vec![f64::INFINITY; self.dataset.n_y],
            _ => self.weights.clone(),
        }
    }

    /// Fisher information at `p_hat` on the region's inputs, scaled by
    /// `1/s^2` for an unknown variance.
    pub fn fisher(&self) -> DMatrix<f64> {
        information_matrix(
            self.model.as_ref(),
            &self.p_hat,
            &self.dataset.inputs,
            &self.information_weights(),
        )
    }

    /// Linearized region in the same convention.
    pub fn linearized(&self) -> Result<Ellipsoid> {
        let n_p = self.num_params();
        let n = self.dataset.len();
        let threshold = match self.dataset.noise {
            Noise::KnownSigma(_) => chi2_quantile(self.alpha, n_p as u32)?,
            Noise::UnknownVariance => {
                if n <= n_p {
                    return Err(Error::Degenerate("unknown variance needs N > n_p".to_string()));
                }
                n_p as f64 * f_quantile(self.alpha, n_p as u32, (n - n_p) as u32)?
            }
        };
        Ellipsoid::new(self.p_hat.clone(), self.fisher(), threshold)
    }
}

/// Free-function form of [`ConfidenceRegion::membership`].
pub fn cr_membership(cr: &ConfidenceRegion, p: &[f64]) -> Membership {
    cr.membership(p)
}

/// `{p : (p - center)^T M (p - center) <= threshold}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: Vec<f64>,
    pub matrix: DMatrix<f64>,
    pub threshold: f64,
    inverse: DMatrix<f64>,
}

impl Ellipsoid {
    /// Fails with a singular-matrix error when the ellipsoid is unbounded.
    pub fn new(center: Vec<f64>, matrix: DMatrix<f64>, threshold: f64) -> Result<Self> {
        let inverse = linalg::spd_inverse(&matrix).map_err(|e| Error::Singular(format!("unbounded ellipsoid: {e}")))?;
        Ok(Self {
            center,
            matrix,
            threshold,
            inverse,
        })
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn quadratic(&self, p: &[f64]) -> f64 {
        linalg::quadratic_form(&self.matrix, p, &self.center)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.quadratic(p) <= self.threshold
    }

    /// Coordinate extremes `center_j -/+ sqrt(c (M^-1)_jj)`.
    pub fn coordinate_ranges(&self) -> Vec<(f64, f64)> {
        self.center
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let h = (self.threshold * self.inverse[(j, j)]).sqrt();
                (c - h, c + h)
            })
            .collect()
    }

    /// Squared diameter `4 c lambda_max(M^-1)`.
    pub fn squared_diameter(&self) -> f64 {
        4.0 * self.threshold
            * linalg::symmetric_eigenvalues(&self.inverse)
                .last()
                .copied()
                .unwrap_or(0.0)
    }

    /// Volume `V_n c^(n/2) / sqrt(det M)` with `V_n` the unit-ball volume.
    pub fn volume(&self) -> f64 {
        let n = self.center.len() as f64;
        let unit = core::f64::consts::PI.powf(n / 2.0) / crate::stats::ln_gamma(n / 2.0 + 1.0).exp();
        unit * self.threshold.powf(n / 2.0) / self.matrix.determinant().sqrt()
    }

    /// Point on the boundary in direction `dir` from the center.
    pub fn boundary_point(&self, dir: &[f64]) -> Vec<f64> {
        let q = linalg::quadratic_form(&self.matrix, dir, &vec![0.0; dir.len()]);
        let t = (self.threshold / q).sqrt();
        self.center.iter().zip(dir).map(|(c, d)| c + t * d).collect()
    }
}

/// Linearized region of a design: known variance uses `FIM` and
/// `chi2(alpha, n_p)`; unknown variance uses `sum S^T S / s^2` and
/// `n_p F(alpha; n_p, N - n_p)`.
pub fn linearized_cr(
    model: &dyn Model,
    p_hat: &[f64],
    design: &[Vec<f64>],
    noise: &Noise,
    alpha: f64,
    s2: Option<f64>,
) -> Result<Ellipsoid> {
    let n_p = model.num_params();
    let n = design.len();
    let (sigma, threshold) = match noise {
        Noise::KnownSigma(s) => (s.clone(), chi2_quantile(alpha, n_p as u32)?),
        Noise::UnknownVariance => {
            let s2 = s2
                .ok_or_else(|| Error::InvalidArgument("unknown variance needs s2 for the linearization".to_string()))?;
            if n <= n_p {
                return Err(Error::Degenerate("unknown variance needs N > n_p".to_string()));
            }
            (
                vec![s2.sqrt(); model.num_outputs()],
                n_p as f64 * f_quantile(alpha, n_p as u32, (n - n_p) as u32)?,
            )
        }
    };
    let fim = fisher_information(model, p_hat, design, &sigma)?;
    Ellipsoid::new(p_hat.to_vec(), fim.matrix, threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub n_starts: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    /// Box for the starts; defaults to `[p0/10, 10 p0]`.
    pub search_box: Option<Bounds>,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            n_starts: 32,
            seed: 0,
            tolerances: Tolerances::default(),
            search_box: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub p_hat: Vec<f64>,
    pub objective: f64,
    pub solution: NlpSolution,
    pub converged_starts: usize,
}

struct LeastSquares<'a> {
    model: &'a dyn Model,
    dataset: &'a Dataset,
    weights: Vec<f64>,
    bounds: Bounds,
}

impl NlpProblem for LeastSquares<'_> {
    fn dimension(&self) -> usize {
        self.model.num_params()
    }
    fn bounds(&self) -> Bounds {
        self.bounds.clone()
    }
    fn objective(&self, p: &[f64]) -> f64 {
        weighted_sse(
            self.model,
            &self.dataset.inputs,
            &self.dataset.outputs,
            &self.weights,
            p,
        )
    }
    fn gradient(&self, p: &[f64], grad: &mut [f64]) {
        weighted_sse_gradient(
            self.model,
            &self.dataset.inputs,
            &self.dataset.outputs,
            &self.weights,
            p,
            grad,
        );
    }
}

/// Least-squares estimate by multistart SQP: `p0` first, then shifted Halton
/// points over the search box.
pub fn least_squares_fit(
    model: &dyn Model,
    dataset: &Dataset,
    p0: &[f64],
    settings: &FitSettings,
) -> Result<FitResult> {
    dataset.check_model(model)?;
    if p0.len() != model.num_params() {
        return Err(Error::DimensionMismatch {
            what: "start parameters",
            expected: model.num_params(),
            found: p0.len(),
        });
    }
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("start parameters"));
    }
    let bounds = settings.search_box.clone().unwrap_or_else(|| default_search_box(p0));
    let problem = LeastSquares {
        model,
        dataset,
        weights: residual_weights(dataset, dataset.noise.is_known())?,
        bounds: bounds.clone(),
    };
    let mut starts = vec![p0.to_vec()];
    if settings.n_starts > 1 {
        starts.extend(nlp::halton_starts(
            &problem,
            &bounds,
            settings.n_starts - 1,
            settings.seed,
        )?);
    }
    let mut x0 = starts[0].clone();
    bounds.project(&mut x0);
    starts[0] = x0;
    let ms = nlp::solve_from_starts(&problem, &starts, &settings.tolerances)?;
    Ok(FitResult {
        p_hat: ms.best.x.clone(),
        objective: ms.best.objective,
        solution: ms.best,
        converged_starts: ms.converged,
    })
}

/// `J_w(p) - J_w(p_hat)` written out for a linear model, used by tests as an
/// independent oracle of the exact region.
pub fn linear_excess_oracle(fim: &DMatrix<f64>, p: &[f64], p_hat: &[f64]) -> f64 {
    let d = DVector::from_iterator(p.len(), p.iter().zip(p_hat).map(|(a, b)| a - b));
    d.dot(&(fim * &d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_bod, ModelSpec};
    use alloc::sync::Arc;

    fn bod() -> ModelRef {
        Arc::new(builtin_bod())
    }

    fn design(u: &[f64]) -> Vec<Vec<f64>> {
        u.iter().map(|v| vec![*v]).collect()
    }

    #[test]
    fn noise_free_residual_is_zero() {
        let m = bod();
        let d = Dataset::noise_free(m.as_ref(), &[2.5, 0.5], &design(&[1.0, 5.0]), Noise::UnknownVariance).unwrap();
        assert_eq!(residual_objective(m.as_ref(), &d, &[2.5, 0.5], false).unwrap(), 0.0);
    }

    #[test]
    fn single_residual_weighted() {
        let m = bod();
        let y = 2.5 * (1.0 - (-0.5f64).exp()) + 0.2;
        let d = Dataset::new(&design(&[1.0]), &[vec![y]], Noise::KnownSigma(vec![0.1])).unwrap();
        let j = residual_objective(m.as_ref(), &d, &[2.5, 0.5], true).unwrap();
        assert!((j - 4.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_needs_positive_sigma() {
        let m = bod();
        let d = Dataset::new(&design(&[1.0]), &[vec![0.0]], Noise::KnownSigma(vec![0.0])).unwrap();
        assert!(residual_objective(m.as_ref(), &d, &[2.5, 0.5], true).is_err());
        let d = Dataset::new(&design(&[1.0]), &[vec![0.0]], Noise::UnknownVariance).unwrap();
        assert!(residual_objective(m.as_ref(), &d, &[2.5, 0.5], true).is_err());
    }

    #[test]
    fn variance_estimate_arithmetic() {
        assert!((variance_estimate(0.8, 10, 2).unwrap().s2 - 0.1).abs() < 1e-15);
        assert_eq!(variance_estimate(0.0, 5, 2).unwrap().s2, 0.0);
        assert!(matches!(variance_estimate(1.0, 2, 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn thresholds() {
        let known = exact_cr_threshold(&Noise::KnownSigma(vec![0.4]), 0.9545, 2, 2, 0.0).unwrap();
        assert!((known - 6.18008).abs() < 1e-5);
        let unknown = exact_cr_threshold(&Noise::UnknownVariance, 0.9545, 2, 4, 0.01).unwrap();
        assert!((unknown - 0.41956).abs() < 1e-5);
        assert_eq!(
            exact_cr_threshold(&Noise::KnownSigma(vec![1.0]), 0.0, 2, 4, 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            exact_cr_threshold(&Noise::UnknownVariance, 0.0, 2, 4, 0.01).unwrap(),
            0.0
        );
        assert!(exact_cr_threshold(&Noise::UnknownVariance, 0.9, 2, 2, 0.01).is_err());
    }

    #[test]
    fn identity_regressor_information() {
        let m = ModelSpec::linear("id", 2, 1, 2, |_u, q| {
            q.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        });
        let fim = fisher_information(&m, &[0.0, 0.0], &design(&[0.0]), &[1.0, 1.0]).unwrap();
        assert_eq!(fim.matrix, DMatrix::identity(2, 2));
    }

    #[test]
    fn bod_information_vanishes_at_zero() {
        let m = bod();
        let fim = fisher_information(m.as_ref(), &[2.5, 0.5], &design(&[0.0, 0.0]), &[0.1]).unwrap();
        assert!(fim.matrix.iter().all(|v| *v == 0.0));
        assert!(fim.inverse().is_err());
    }

    #[test]
    fn membership_basics() {
        let m = bod();
        let d = Dataset::noise_free(
            m.as_ref(),
            &[2.5, 0.5],
            &design(&[1.37, 1.37, 20.0, 20.0]),
            Noise::UnknownVariance,
        )
        .unwrap();
        let cr = ConfidenceRegion::new(m, d, &[2.5, 0.5], 0.9545, Some(0.01)).unwrap();
        assert!((cr.threshold() - 0.41956).abs() < 1e-5);
        assert!(cr.membership(&[2.5, 0.5]).member);
        assert!(!cr.membership(&[12.5, 10.5]).member);
    }

    #[test]
    fn excess_gradient_matches_differences() {
        let m = bod();
        let d = Dataset::noise_free(
            m.as_ref(),
            &[2.5, 0.5],
            &design(&[1.0, 3.0, 20.0]),
            Noise::KnownSigma(vec![0.4]),
        )
        .unwrap();
        let cr = ConfidenceRegion::new(m, d, &[2.5, 0.5], 0.9545, None).unwrap();
        let p = [2.7, 0.41];
        let mut g = [0.0; 2];
        cr.excess_gradient(&p, &mut g);
        let mut fd = [0.0; 2];
        nlp::central_gradient(|x| cr.excess(x), &p, &mut fd);
        for j in 0..2 {
            assert!((g[j] - fd[j]).abs() < 1e-6 * g[j].abs().max(1.0));
        }
    }

    #[test]
    fn noise_free_fit_recovers_truth() {
        let m = bod();
        let d = Dataset::noise_free(
            m.as_ref(),
            &[2.5, 0.5],
            &design(&[1.0, 2.0, 5.0, 20.0]),
            Noise::KnownSigma(vec![0.1]),
        )
        .unwrap();
        let fit = least_squares_fit(
            m.as_ref(),
            &d,
            &[2.0, 0.8],
            &FitSettings {
                n_starts: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (fit.p_hat[0] - 2.5).abs() < 1e-6 && (fit.p_hat[1] - 0.5).abs() < 1e-6,
            "{:?}",
            fit.p_hat
        );
    }

    #[test]
    fn search_box_orders_negative_entries() {
        let b = default_search_box(&[-4.0, 0.0, 2.0]);
        assert_eq!(b.lower, vec![-40.0, -1.0, 0.2]);
        assert_eq!(b.upper, vec![-0.4, 1.0, 20.0]);
    }
}
