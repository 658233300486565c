use thiserror::Error;

/// Errors raised by the inference engine.
///
/// Soft conditions (imprecise Monte Carlo estimates, a chain that never
/// moves) are not errors; they are carried as flags on the returned values.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("dimension-prior certificate refused: {0}")]
    CertificateRefused(String),

    #[error("{what} needs {needed} evaluations, budget is {budget}")]
    ComplexityRefused { what: String, needed: f64, budget: f64 },

    #[error("solver stalled: {msg} (best bound {best})")]
    Solver { msg: String, best: f64 },

    #[error("design restricted to model {0:?} is rank deficient")]
    Rank(Vec<usize>),

    #[error("mixture has no admissible component")]
    EmptyMixture,

    #[error("subspace family is empty")]
    EmptyFamily,

    #[error("no convergence after {iterations} iterations (kkt residual {kkt})")]
    Convergence {
        iterations: usize,
        kkt: f64,
        best: Vec<f64>,
    },

    #[error("integral failed: {0}")]
    Integral(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn budget(what: impl Into<String>, needed: f64, budget: f64) -> Self {
        Error::ComplexityRefused {
            what: what.into(),
            needed,
            budget,
        }
    }
}
