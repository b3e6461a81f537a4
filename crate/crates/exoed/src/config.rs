//! Run configuration: a JSON file, with command-line flags on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use exoed_core::design::{Criterion, DesignNoise, DesignProblem, DesignSettings, Method};
use exoed_core::model::{builtin, ModelRef};
use exoed_core::nlp::Bounds;
use exoed_core::stats::TWO_SIGMA_ALPHA;
use serde::{Deserialize, Serialize};

use crate::error::{ExoedError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Built-in model id: `bod` or `second-order`.
    pub id: String,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Known {
        sigma: Vec<f64>,
    },
    /// Unknown variance with the design-time surrogate `s2`.
    Unknown {
        s2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl From<&BoundsConfig> for Bounds {
    fn from(b: &BoundsConfig) -> Self {
        Bounds::new(b.lower.clone(), b.upper.clone())
    }
}

/// Optional overrides of the design solver defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub restarts: Option<usize>,
    pub restart_spread: Option<f64>,
    pub max_iterations: Option<usize>,
    pub step_tol: Option<f64>,
    pub copy_tol: Option<f64>,
    pub gradient_tol: Option<f64>,
    pub classical_starts: Option<usize>,
    pub inner_grid_resolution: Option<usize>,
    pub grid_resolution: Option<usize>,
    pub rays: Option<usize>,
    pub geometry_starts: Option<usize>,
    pub node_budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Simulated noise level per output; defaults to the design noise.
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    /// Sample count of the compared designs; defaults to the first `n`.
    #[serde(default)]
    pub n: Option<usize>,
    /// Defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_robust_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "all_criteria")]
    pub criteria: Vec<Criterion>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            sigma: None,
            n: None,
            seed: None,
            methods: default_robust_methods(),
            criteria: all_criteria(),
        }
    }
}

fn default_trials() -> usize {
    1000
}

fn default_robust_methods() -> Vec<Method> {
    vec![Method::Classical, Method::Exact, Method::Ellipsoidal]
}

fn all_criteria() -> Vec<Criterion> {
    vec![Criterion::A, Criterion::D, Criterion::E]
}

fn default_alpha() -> f64 {
    TWO_SIGMA_ALPHA
}

fn default_epsilon() -> f64 {
    5e-3
}

fn default_methods() -> Vec<Method> {
    vec![Method::Classical, Method::Exact, Method::Ellipsoidal]
}

fn default_name() -> String {
    "run".to_string()
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Tag used in output file names.
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelConfig,
    pub p_hat: Vec<f64>,
    pub noise: NoiseConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "all_criteria")]
    pub criteria: Vec<Criterion>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub n: Vec<usize>,
    /// Defaults to the model's natural input range.
    #[serde(default)]
    pub input_bounds: Option<BoundsConfig>,
    /// Parameter search box of the lower levels; defaults to `[p/10, 10 p]`.
    #[serde(default)]
    pub search_box: Option<BoundsConfig>,
    /// Grid spacing of the D criterion.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub robustness: RobustnessConfig,
    /// Record wall times; off gives byte-identical outputs across runs.
    #[serde(default = "yes")]
    pub timing: bool,
}

/// Flag values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub name: Option<String>,
    pub model: Option<String>,
    pub constants: Vec<(String, f64)>,
    pub p_hat: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub s2: Option<f64>,
    pub alpha: Option<f64>,
    pub criteria: Option<Vec<Criterion>>,
    pub methods: Option<Vec<Method>>,
    pub n: Option<Vec<usize>>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub trials: Option<usize>,
    pub trial_sigma: Option<Vec<f64>>,
    pub restarts: Option<usize>,
    pub max_iterations: Option<usize>,
    pub no_timing: bool,
}

fn config_err(e: impl ToString) -> ExoedError {
    ExoedError::Config(e.to_string())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExoedError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ExoedError::parse(path, e))
    }

    /// The optional file, then the flags, then validation.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::load(path)?,
            None => {
                let id = overrides
                    .model
                    .clone()
                    .ok_or_else(|| config_err("either --config or --model is required"))?;
                let p_hat = overrides
                    .p_hat
                    .clone()
                    .ok_or_else(|| config_err("--p-hat is required without --config"))?;
                let noise = match (&overrides.sigma, overrides.s2) {
                    (Some(s), None) => NoiseConfig::Known { sigma: s.clone() },
                    (None, Some(s2)) => NoiseConfig::Unknown { s2 },
                    _ => return Err(config_err("give exactly one of --sigma and --s2 without --config")),
                };
                Self {
                    name: default_name(),
                    model: ModelConfig {
                        id,
                        constants: BTreeMap::new(),
                    },
                    p_hat,
                    noise,
                    alpha: default_alpha(),
                    criteria: all_criteria(),
                    methods: default_methods(),
                    n: Vec::new(),
                    input_bounds: None,
                    search_box: None,
                    epsilon: default_epsilon(),
                    solver: SolverConfig::default(),
                    seed: 0,
                    output: default_output(),
                    robustness: RobustnessConfig::default(),
                    timing: true,
                }
            }
        };
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.name {
            self.name = v.clone();
        }
        if let Some(v) = &o.model {
            self.model.id = v.clone();
        }
        for (k, v) in &o.constants {
            self.model.constants.insert(k.clone(), *v);
        }
        if let Some(v) = &o.p_hat {
            self.p_hat = v.clone();
        }
        match (&o.sigma, o.s2) {
            (Some(_), Some(_)) => return Err(config_err("--sigma and --s2 are exclusive")),
            (Some(s), None) => self.noise = NoiseConfig::Known { sigma: s.clone() },
            (None, Some(s2)) => self.noise = NoiseConfig::Unknown { s2 },
            (None, None) => {}
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = &o.criteria {
            self.criteria = v.clone();
        }
        if let Some(v) = &o.methods {
            self.methods = v.clone();
        }
        if let Some(v) = &o.n {
            self.n = v.clone();
        }
        if let Some(v) = o.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.output {
            self.output = v.clone();
        }
        if let Some(v) = o.trials {
            self.robustness.trials = v;
        }
        if let Some(v) = &o.trial_sigma {
            self.robustness.sigma = Some(v.clone());
        }
        if let Some(v) = o.restarts {
            self.solver.restarts = Some(v);
        }
        if let Some(v) = o.max_iterations {
            self.solver.max_iterations = Some(v);
        }
        if o.no_timing {
            self.timing = false;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelRef> {
        let constants: Vec<(String, f64)> = self.model.constants.iter().map(|(k, v)| (k.clone(), *v)).collect();
        builtin(&self.model.id, &constants).map_err(config_err)
    }

    pub fn design_noise(&self) -> DesignNoise {
        match &self.noise {
            NoiseConfig::Known { sigma } => DesignNoise::Known(sigma.clone()),
            NoiseConfig::Unknown { s2 } => DesignNoise::Unknown { s2: *s2 },
        }
    }

    pub fn settings(&self) -> DesignSettings {
        let mut s = DesignSettings {
            epsilon: self.epsilon,
            seed: self.seed,
            ..DesignSettings::default()
        };
        s.geometry.seed = self.seed;
        let c = &self.solver;
        if let Some(v) = c.restarts {
            s.restarts = v;
        }
        if let Some(v) = c.restart_spread {
            s.restart_spread = v;
        }
        if let Some(v) = c.max_iterations {
            s.max_iterations = v;
        }
        if let Some(v) = c.step_tol {
            s.step_tol = v;
        }
        if let Some(v) = c.copy_tol {
            s.copy_tol = v;
        }
        if let Some(v) = c.gradient_tol {
            s.gradient_tol = v;
        }
        if let Some(v) = c.classical_starts {
            s.classical_starts = v;
        }
        if let Some(v) = c.inner_grid_resolution {
            s.inner_grid_resolution = v;
        }
        if let Some(v) = c.grid_resolution {
            s.geometry.grid_resolution = v;
        }
        if let Some(v) = c.rays {
            s.geometry.rays = v;
        }
        if let Some(v) = c.geometry_starts {
            s.geometry.n_starts = v;
        }
        if let Some(v) = c.node_budget {
            s.node_budget = v;
        }
        s
    }

    /// The validated design problem of one table row.
    pub fn problem(&self, criterion: Criterion, method: Method, n: usize) -> Result<DesignProblem> {
        let model = self.model()?;
        let input_bounds = match &self.input_bounds {
            Some(b) => b.into(),
            None => match model.input_bounds() {
                Some((lo, hi)) => Bounds::new(lo, hi),
                None => return Err(config_err("input_bounds are required for this model")),
            },
        };
        let problem = DesignProblem {
            model,
            p_hat: self.p_hat.clone(),
            criterion,
            method,
            n_samples: n,
            input_bounds,
            alpha: self.alpha,
            noise: self.design_noise(),
            search_box: self.search_box.as_ref().map(Bounds::from),
            settings: self.settings(),
        };
        problem.validate().map_err(config_err)?;
        Ok(problem)
    }

    /// `(method, criterion, N)` rows of the table, skipping method and
    /// criterion pairs that do not exist (ellipsoidal is D only, KKT is A only).
    pub fn rows(&self) -> Vec<(Method, Criterion, usize)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            for &c in &self.criteria {
                if !applicable(m, c) {
                    continue;
                }
                for &n in &self.n {
                    out.push((m, c, n));
                }
            }
        }
        out
    }

    /// Noise level of the robustness trials.
    pub fn trial_sigma(&self) -> Result<Vec<f64>> {
        if let Some(s) = &self.robustness.sigma {
            return Ok(s.clone());
        }
        let n_y = self.model()?.num_outputs();
        Ok(match &self.noise {
            NoiseConfig::Known { sigma } => sigma.clone(),
            NoiseConfig::Unknown { s2 } => vec![s2.sqrt(); n_y],
        })
    }

    pub fn trial_n(&self) -> Result<usize> {
        self.robustness
            .n
            .or_else(|| self.n.first().copied())
            .ok_or_else(|| config_err("robustness needs a sample count"))
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(config_err("name must be a plain file-name fragment"));
        }
        if self.p_hat.iter().any(|v| !v.is_finite()) {
            return Err(config_err("p_hat must be finite"));
        }
        if self.criteria.is_empty() || self.methods.is_empty() {
            return Err(config_err("criteria and methods must not be empty"));
        }
        if self.n.is_empty() && self.robustness.n.is_none() {
            return Err(config_err("at least one sample count `n` is required"));
        }
        for (m, c, n) in self.rows() {
            self.problem(c, m, n)
                .map_err(|e| config_err(format!("{} {} N={n}: {e}", m.name(), c.name())))?;
        }
        let r = &self.robustness;
        if r.trials == 0 {
            return Err(config_err("robustness trials must be positive"));
        }
        let sigma = self.trial_sigma()?;
        if sigma.len() != model.num_outputs() || sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(config_err("robustness sigma must be finite, >= 0, one per output"));
        }
        Ok(())
    }
}

pub fn applicable(method: Method, criterion: Criterion) -> bool {
    match method {
        Method::Ellipsoidal => criterion == Criterion::D,
        Method::Kkt => criterion == Criterion::A,
        Method::Classical | Method::Exact => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE1: &str = r#"{
        "name": "case1",
        "model": {"id": "bod"},
        "p_hat": [2.5, 0.5],
        "noise": {"kind": "unknown", "s2": 0.01},
        "criteria": ["a", "D"],
        "methods": ["classical", "ellipsoidal"],
        "n": [4, 5]
    }"#;

    #[test]
    fn parses_and_lists_rows() {
        let cfg = RunConfig::from_json(CASE1).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.alpha, TWO_SIGMA_ALPHA);
        assert_eq!(
            cfg.rows(),
            vec![
                (Method::Classical, Criterion::A, 4),
                (Method::Classical, Criterion::A, 5),
                (Method::Classical, Criterion::D, 4),
                (Method::Classical, Criterion::D, 5),
                (Method::Ellipsoidal, Criterion::D, 4),
                (Method::Ellipsoidal, Criterion::D, 5),
            ]
        );
        assert_eq!(cfg.trial_sigma().unwrap(), vec![0.1]);
    }

    #[test]
    fn flags_override_the_file() {
        let mut cfg = RunConfig::from_json(CASE1).unwrap();
        cfg.apply(&Overrides {
            n: Some(vec![6]),
            seed: Some(7),
            sigma: Some(vec![0.2]),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(cfg.n, vec![6]);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.noise, NoiseConfig::Known { sigma: vec![0.2] });
        assert_eq!(cfg.settings().seed, 7);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_json(r#"{"model": {"id": "bod"}}"#).is_err());
        let bad_model = CASE1.replace("\"bod\"", "\"nope\"");
        assert!(RunConfig::from_json(&bad_model).unwrap().validate().is_err());
        // Unknown variance with N <= n_p has no residual degrees of freedom.
        let few = CASE1.replace("[4, 5]", "[2]");
        assert!(RunConfig::from_json(&few).unwrap().validate().is_err());
        let typo = CASE1.replace("\"n\":", "\"nn\": 1, \"n\":");
        assert!(RunConfig::from_json(&typo).is_err());
    }

    #[test]
    fn flags_alone_need_model_and_noise() {
        assert!(RunConfig::resolve(None, &Overrides::default()).is_err());
        let o = Overrides {
            model: Some("second-order".into()),
            p_hat: Some(vec![0.5, 1.0]),
            sigma: Some(vec![0.4]),
            n: Some(vec![2]),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(None, &o).unwrap();
        assert_eq!(cfg.model().unwrap().num_params(), 2);
    }
}
