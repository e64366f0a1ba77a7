use aad_autodiff::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AadError {
    /// Bad hyperparameters or an infeasible request.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input violates an operation's precondition (too short, wrong shape).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl AadError {
    /// True for errors a caller can fix by changing configuration rather
    /// than data or environment.
    pub fn is_config(&self) -> bool {
        matches!(self, AadError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, AadError>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(AadError::Config(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(AadError::Contract(msg.into()))
}
