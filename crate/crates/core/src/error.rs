//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got} in {context}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("did not converge within {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular normal matrix in weighted least squares; retry with ridge > 0")]
    SingularProjection,

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("action gap must be positive, got {0}")]
    NoActionGap(f64),

    #[error("radius {radius:e} is not inside the contraction radius r0 = {r0:e}")]
    OutOfRegion { radius: f64, r0: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("feature map mismatch: coefficients were built for a different feature map")]
    FeatureMapMismatch,

    #[error("no runs completed: {0}")]
    NoCompletedRuns(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
