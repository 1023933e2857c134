use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the feasible box")]
    Infeasible { point: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("simulation evaluation failed: {0}")]
    Evaluation(String),

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error(
        "design matrix has rank {rank} but {columns} columns; \
         the least-squares solution is not unique, use regularized least squares"
    )]
    RankDeficient { rank: usize, columns: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("Cholesky factorization failed after {attempts} jitter escalations")]
    Factorization { attempts: usize },

    #[error("capability not available: {0}")]
    Capability(String),

    #[error("noise variance of observation {index} is unknown; supply a variance floor")]
    UnknownNoise { index: usize },

    #[error("posterior variance {value} is negative beyond rounding tolerance")]
    NegativeVariance { value: f64 },

    #[error("simulation budget exhausted: requested {requested}, remaining {remaining}")]
    Budget { requested: u64, remaining: u64 },

    #[error("hyperparameter fitting failed: {0}")]
    Fitting(String),

    #[error("sampling envelope too loose: acceptance rate {rate:e}")]
    Envelope { rate: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
