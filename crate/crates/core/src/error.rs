use thiserror::Error;

/// Errors raised across the library. Variants carry the offending values so
/// callers can report the exact location of a failure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain violation in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("singular volatility at t={t}, state={state:?} (condition number {cond:.3e})")]
    SingularVolatility { t: f64, state: Vec<f64>, cond: f64 },

    #[error("non-finite value in {what} on path {path}, node {node}")]
    NonFinite { what: &'static str, path: usize, node: usize },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("regression rank deficiency at node {node}: rank {rank} < {columns} columns")]
    RankDeficient { node: usize, rank: usize, columns: usize },

    #[error("truncation saturated on {fraction:.4} of nodes (limit {limit}); raise the generator cap m")]
    TruncationSaturated { fraction: f64, limit: f64 },

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("scan minimum on grid boundary at y={y} (grid [{lo}, {hi}]); widen the y-grid")]
    BoundaryMinimum { y: f64, lo: f64, hi: f64 },

    #[error("inadmissible candidate: wealth negative on {fraction:.4} of paths")]
    Inadmissible { fraction: f64 },

    #[error("perturbation family violates N^eps -> 1: {0}")]
    FamilyNotVanishing(String),

    #[error("at eps={eps}: {source}")]
    AtEps {
        eps: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_eps(self, eps: f64) -> Self {
        Error::AtEps {
            eps,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
