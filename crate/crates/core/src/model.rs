//! Static explicit models `y = F(p, u)` and their parameter sensitivities.

use alloc::sync::Arc;
use core::fmt;

use nalgebra::DMatrix;

use crate::prelude::*;
use crate::{Error, Result};

/// A static explicit model with `num_params` parameters, `num_inputs`
/// experimental degrees of freedom and `num_outputs` measured outputs.
///
/// Implementations must be pure: identical `(p, u)` yields bit-identical
/// outputs.
pub trait Model: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn num_params(&self) -> usize;
    fn num_inputs(&self) -> usize;
    fn num_outputs(&self) -> usize;

    /// Writes `F(p, u)` into `y`. Dimensions are checked by the callers.
    fn eval_into(&self, p: &[f64], u: &[f64], y: &mut [f64]);

    /// Writes the row-major `num_outputs x num_params` sensitivity matrix and
    /// returns `true`, or returns `false` when the model has no analytic form.
    fn analytic_jacobian(&self, _p: &[f64], _u: &[f64], _jac: &mut [f64]) -> bool {
        false
    }

    /// Rejects parameter vectors outside the model's domain.
    fn check_params(&self, _p: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Named constants the model was built with (e.g. `b0`).
    fn constants(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }

    /// Natural bounds of the inputs, when the model has them.
    fn input_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

/// Shared handle to a model.
pub type ModelRef = Arc<dyn Model>;

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { what, expected, found });
    }
    Ok(())
}

fn check_finite(what: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Evaluates `F(p, u)` with dimension and finiteness checks.
pub fn evaluate_model(model: &dyn Model, p: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_len("parameters", model.num_params(), p.len())?;
    check_len("inputs", model.num_inputs(), u.len())?;
    check_finite("parameters", p)?;
    check_finite("inputs", u)?;
    model.check_params(p)?;
    let mut y = vec![0.0; model.num_outputs()];
    model.eval_into(p, u, &mut y);
    check_finite("model output", &y)?;
    Ok(y)
}

/// Central-difference step for parameter `p_j`.
pub fn fd_step(pj: f64) -> f64 {
    1e-6f64.max(1e-6 * pj.abs())
}

/// Central finite-difference sensitivities, row-major `n_y x n_p`.
pub fn finite_difference_jacobian(model: &dyn Model, p: &[f64], u: &[f64], jac: &mut [f64]) {
    let n_p = model.num_params();
    let n_y = model.num_outputs();
    let mut probe = p.to_vec();
    let mut plus = vec![0.0; n_y];
    let mut minus = vec![0.0; n_y];
    for j in 0..n_p {
        let h = fd_step(p[j]);
        probe[j] = p[j] + h;
        model.eval_into(&probe, u, &mut plus);
        probe[j] = p[j] - h;
        model.eval_into(&probe, u, &mut minus);
        probe[j] = p[j];
        for i in 0..n_y {
            jac[i * n_p + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
}

/// Fills `jac` with analytic sensitivities when available, otherwise central
/// differences. No checks; used on hot paths.
pub fn jacobian_into(model: &dyn Model, p: &[f64], u: &[f64], jac: &mut [f64]) {
    if !model.analytic_jacobian(p, u, jac) {
        finite_difference_jacobian(model, p, u, jac);
    }
}

/// `dF/dp` at `(p, u)` as an `n_y x n_p` matrix.
pub fn param_jacobian(model: &dyn Model, p: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
    check_len("parameters", model.num_params(), p.len())?;
    check_len("inputs", model.num_inputs(), u.len())?;
    check_finite("parameters", p)?;
    check_finite("inputs", u)?;
    model.check_params(p)?;
    let mut jac = vec![0.0; model.num_outputs() * model.num_params()];
    jacobian_into(model, p, u, &mut jac);
    check_finite("sensitivities", &jac)?;
    Ok(DMatrix::from_row_slice(model.num_outputs(), model.num_params(), &jac))
}

/// Cumulative biochemical oxygen demand, `y = p1 (1 - exp(-p2 u))` for
/// incubation time `u` in `[0, 20]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bod;

impl Model for Bod {
    fn id(&self) -> &str {
        "bod"
    }
    fn num_params(&self) -> usize {
        2
    }
    fn num_inputs(&self) -> usize {
        1
    }
    fn num_outputs(&self) -> usize {
        1
    }

    fn eval_into(&self, p: &[f64], u: &[f64], y: &mut [f64]) {
        y[0] = p[0] * (1.0 - (-p[1] * u[0]).exp());
    }

    fn analytic_jacobian(&self, p: &[f64], u: &[f64], jac: &mut [f64]) -> bool {
        let e = (-p[1] * u[0]).exp();
        jac[0] = 1.0 - e;
        jac[1] = p[0] * u[0] * e;
        true
    }

    fn input_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![0.0], vec![20.0]))
    }
}

/// Step response of `G(s) = b0 (s - p1) / (s + p2)^2`:
/// `y = b0 p1/p2^2 ([p2 (p1 + p2)/p1 u + 1] exp(-p2 u) - 1)` for `u` in `[0, 10]`.
#[derive(Debug, Clone, Copy)]
pub struct SecondOrder {
    b0: f64,
}

impl SecondOrder {
    pub const DEFAULT_GAIN: f64 = -4.0;

    pub fn new(b0: f64) -> Result<Self> {
        if !b0.is_finite() {
            return Err(Error::NonFinite("b0"));
        }
        Ok(Self { b0 })
    }

    pub fn gain(&self) -> f64 {
        self.b0
    }
}

impl Default for SecondOrder {
    fn default() -> Self {
        Self { b0: Self::DEFAULT_GAIN }
    }
}

impl Model for SecondOrder {
    fn id(&self) -> &str {
        "second-order"
    }
    fn num_params(&self) -> usize {
        2
    }
    fn num_inputs(&self) -> usize {
        1
    }
    fn num_outputs(&self) -> usize {
        1
    }

    // Expanded form of the step response: the p1 in the denominator cancels,
    // which keeps the expression accurate for small p1.
    fn eval_into(&self, p: &[f64], u: &[f64], y: &mut [f64]) {
        let (a, b, t) = (p[0], p[1], u[0]);
        let e = (-b * t).exp();
        let inv_b2 = 1.0 / (b * b);
        let bracket = (a + b) * t / b + a * inv_b2;
        y[0] = self.b0 * (bracket * e - a * inv_b2);
    }

    fn analytic_jacobian(&self, p: &[f64], u: &[f64], jac: &mut [f64]) -> bool {
        let (a, b, t) = (p[0], p[1], u[0]);
        let e = (-b * t).exp();
        let b2 = b * b;
        let b3 = b2 * b;
        jac[0] = self.b0 * ((t / b + 1.0 / b2) * e - 1.0 / b2);
        let bracket = (a + b) * t / b + a / b2;
        let d_bracket = -a * t / b2 - 2.0 * a / b3;
        jac[1] = self.b0 * (d_bracket * e - t * bracket * e + 2.0 * a / b3);
        true
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p[0] == 0.0 {
            return Err(Error::Domain("second-order model requires p1 != 0".to_string()));
        }
        if p[1] == 0.0 {
            return Err(Error::Domain("second-order model requires p2 != 0".to_string()));
        }
        Ok(())
    }

    fn constants(&self) -> Vec<(&'static str, f64)> {
        vec![("b0", self.b0)]
    }

    fn input_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![0.0], vec![10.0]))
    }
}

/// The BOD model of case study 1.
pub fn builtin_bod() -> Bod {
    Bod
}

/// The second-order step-response model of case study 2.
pub fn builtin_second_order(b0: f64) -> Result<SecondOrder> {
    SecondOrder::new(b0)
}

/// Resolves a built-in model by its string id (`"bod"`, `"second-order"`).
pub fn builtin(id: &str, constants: &[(String, f64)]) -> Result<ModelRef> {
    let lookup = |name: &str| constants.iter().find(|(k, _)| k == name).map(|(_, v)| *v);
    match id {
        "bod" => Ok(Arc::new(Bod)),
        "second-order" | "second_order" => {
            let b0 = lookup("b0").unwrap_or(SecondOrder::DEFAULT_GAIN);
            Ok(Arc::new(SecondOrder::new(b0)?))
        }
        other => Err(Error::InvalidArgument(format!("unknown model id `{other}`"))),
    }
}

type EvalFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A user-defined model built from closures.
pub struct ModelSpec {
    id: String,
    num_params: usize,
    num_inputs: usize,
    num_outputs: usize,
    eval: Box<EvalFn>,
    sensitivity: Option<Box<EvalFn>>,
    constants: Vec<(&'static str, f64)>,
    input_bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("id", &self.id)
            .field("num_params", &self.num_params)
            .field("num_inputs", &self.num_inputs)
            .field("num_outputs", &self.num_outputs)
            .field("analytic_sensitivity", &self.sensitivity.is_some())
            .finish()
    }
}

impl ModelSpec {
    pub fn new(
        id: impl Into<String>,
        num_params: usize,
        num_inputs: usize,
        num_outputs: usize,
        eval: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            num_params,
            num_inputs,
            num_outputs,
            eval: Box::new(eval),
            sensitivity: None,
            constants: Vec::new(),
            input_bounds: None,
        }
    }

    /// Supplies analytic sensitivities, written row-major `n_y x n_p`.
    pub fn with_sensitivity(
        mut self,
        sensitivity: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sensitivity = Some(Box::new(sensitivity));
        self
    }

    pub fn with_constant(mut self, name: &'static str, value: f64) -> Self {
        self.constants.push((name, value));
        self
    }

    /// Natural input range, used as the default design space.
    pub fn with_input_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.input_bounds = Some((lower, upper));
        self
    }

    /// A linear-in-parameters model `y = Q(u) p`, with `regressor` writing the
    /// row-major `n_y x n_p` matrix `Q(u)`.
    pub fn linear(
        id: impl Into<String>,
        num_params: usize,
        num_inputs: usize,
        num_outputs: usize,
        regressor: impl Fn(&[f64], &mut [f64]) + Send + Sync + Clone + 'static,
    ) -> Self {
        let q = regressor.clone();
        Self::new(id, num_params, num_inputs, num_outputs, move |p, u, y| {
            let mut m = vec![0.0; num_outputs * num_params];
            q(u, &mut m);
            for i in 0..num_outputs {
                y[i] = (0..num_params).map(|j| m[i * num_params + j] * p[j]).sum();
            }
        })
        .with_sensitivity(move |_p, u, jac| regressor(u, jac))
    }
}

impl Model for ModelSpec {
    fn id(&self) -> &str {
        &self.id
    }
    fn num_params(&self) -> usize {
        self.num_params
    }
    fn num_inputs(&self) -> usize {
        self.num_inputs
    }
    fn num_outputs(&self) -> usize {
        self.num_outputs
    }
    fn eval_into(&self, p: &[f64], u: &[f64], y: &mut [f64]) {
        (self.eval)(p, u, y)
    }
    fn analytic_jacobian(&self, p: &[f64], u: &[f64], jac: &mut [f64]) -> bool {
        match &self.sensitivity {
            Some(s) => {
                s(p, u, jac);
                true
            }
            None => false,
        }
    }
    fn constants(&self) -> Vec<(&'static str, f64)> {
        self.constants.clone()
    }
    fn input_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.input_bounds.clone()
    }
}
