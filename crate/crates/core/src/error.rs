use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported loss: {0}")]
    UnsupportedLoss(String),

    #[error("finite-difference oracle failed: {0}")]
    OracleFailure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cannot construct scenario: {0}")]
    ScenarioConstruction(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("inconclusive scale: remainder {err:.3e} is below the numeric floor, use a larger eta")]
    InconclusiveScale { err: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's one-line diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::UnsupportedLoss(_) => "unsupported_loss",
            Error::OracleFailure(_) => "oracle_failure",
            Error::Precondition(_) => "precondition",
            Error::ScenarioConstruction(_) => "scenario_construction",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Divergence { .. } => "divergence",
            Error::InconclusiveScale { .. } => "inconclusive_scale",
            Error::Format(_) => "format",
            Error::Consistency(_) => "consistency",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
