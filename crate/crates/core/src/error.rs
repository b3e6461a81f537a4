use alloc::string::String;

/// Errors produced by the design toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// No residual degrees of freedom (N <= n_p) where a variance is needed.
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    /// A lower-level extreme sits on the parameter search box.
    #[error("confidence region touches the search box along parameter {parameter}")]
    BoxTooSmall { parameter: usize },
    #[error("no feasible grid node")]
    EmptyGrid,
    #[error("grid needs {nodes} nodes, above the budget of {budget}; use a larger spacing")]
    GridBudget { nodes: u64, budget: u64 },
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("all {0} starts failed")]
    AllStartsFailed(usize),
    #[error("global verification failed: gap {gap:.3e} exceeds tolerance {tolerance:.3e}")]
    VerificationFailed { gap: f64, tolerance: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    /// True for failures of the global-optimality checks rather than of a solve.
    pub fn is_verification(&self) -> bool {
        matches!(self, Error::VerificationFailed { .. })
    }
}
