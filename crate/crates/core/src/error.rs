use thiserror::Error;

/// Errors raised by the analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input contains non-finite entries")]
    NonFinite,

    #[error("control matrix B is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficientB { rank: usize, cols: usize },

    #[error("Kalman rank condition fails: rank [B, AB, ..., A^(n-1)B] = {rank} < n = {n}")]
    NotControllable { rank: usize, n: usize },

    #[error("time must be strictly positive (got {0})")]
    NonPositiveTime(f64),

    #[error("rescaled Gramian series is degenerate: {0}")]
    SeriesDegenerate(String),

    #[error("least-squares fit is ill-conditioned: {0}")]
    FitIllConditioned(String),

    #[error("pole coefficient extrapolation is unstable: {0}")]
    ExtrapolationUnstable(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("too few samples for a moment check ({got} < {min})")]
    TooFewSamples { got: usize, min: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
