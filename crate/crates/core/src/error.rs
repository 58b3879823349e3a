use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A hypothesis of the reduction fails, e.g. a warp that is not integrable at 0.
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("eigensolver did not converge after {iterations} iterations (row {row}, residual {residual:e})")]
    Convergence {
        iterations: usize,
        row: usize,
        residual: f64,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
