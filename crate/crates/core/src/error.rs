use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "quadrature did not reach tolerance at alpha={alpha}, c={c}, tau={tau}: \
         estimated relative error {estimate:.3e} > {tolerance:.3e} with {nodes} nodes"
    )]
    Quadrature {
        alpha: f64,
        c: f64,
        tau: f64,
        nodes: usize,
        estimate: f64,
        tolerance: f64,
    },

    #[error("({alpha}, {c}) is not a point of the partition table grid")]
    OffGrid { alpha: f64, c: f64 },

    #[error("normal equations are singular (damping reached {damping:.3e})")]
    Singular { damping: f64 },

    #[error("non-finite residual at outer iteration {iteration}")]
    NonFiniteResidual { iteration: usize },

    #[error("under-constrained problem: {pairs} correspondences, need at least 3")]
    UnderConstrained { pairs: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
