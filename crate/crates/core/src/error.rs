use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid Q-circle geometry: {0}")]
    InvalidGeometry(String),

    #[error("unit mismatch: expected {expected}, found {found}")]
    UnitMismatch { expected: String, found: String },

    #[error("integration failed at t = {t:e} s: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("model evaluation produced a non-finite value at parameters {0:?}")]
    ModelEvaluation(Vec<f64>),

    #[error("no oscillation: strongest peak is {ratio:.2}x the median spectral floor")]
    NoOscillation { ratio: f64 },

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("inconsistent lifetimes: {0}")]
    Inconsistent(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad user input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IntegrationFailure { .. } | Error::ModelEvaluation(_) | Error::NoOscillation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
