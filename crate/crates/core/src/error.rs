use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate offspring law: a single atom at {0} gives a deterministic process")]
    DegenerateLaw(u64),
    #[error("offspring mean {0} is not > 1; the process is not supercritical")]
    Subcritical(f64),
    #[error("probabilities sum to {sum} (truncated mass {truncated}); deviation from 1 exceeds tolerance")]
    MassDeficit { sum: f64, truncated: f64 },
    #[error("invalid probability {value} at {at}")]
    InvalidProbability { at: String, value: f64 },
    #[error("no convergence in {what} after {iterations} iterations (last gap {gap:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        gap: f64,
    },
    #[error("lattice spans differ: {0} vs {1}")]
    SpanMismatch(u64, u64),
    #[error("projected support {projected} exceeds the configured budget {budget}")]
    SupportOverflow { projected: usize, budget: usize },
    #[error("operation requires the Schröder case (p0 + p1 > 0)")]
    NotSchroder,
    #[error("operation requires the Böttcher case (p0 + p1 = 0)")]
    NotBottcher,
    #[error("depth too shallow: lattice point {k} is below the local-limit validity threshold {threshold}")]
    DepthTooShallow { k: f64, threshold: f64 },
    #[error("increment law has zero variance")]
    VarianceZero,
    #[error("tail index {0} must exceed 2")]
    TailTooHeavy(f64),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("bound `{bound}` requires {requirement}")]
    MissingMomentFlag {
        bound: &'static str,
        requirement: &'static str,
    },
    #[error("integral diverges: {0}")]
    DivergentIntegral(String),
    #[error("regime precondition violated: {0}")]
    RegimePreconditionViolated(String),
    #[error("invalid configuration at `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("I/O failure: {0}")]
    IoFailure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::IoFailure(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
