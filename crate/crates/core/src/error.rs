use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown function id `{0}`")]
    UnknownFunction(String),

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate bounds in coordinate {coord}: lower {lower} >= upper {upper}")]
    DegenerateBounds { coord: usize, lower: f64, upper: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("every start of the multistart optimization failed")]
    AllStartsFailed,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("covariance matrix is ill-conditioned even with nugget {nugget:e}")]
    IllConditioned { nugget: f64 },
}
