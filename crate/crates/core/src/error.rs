use thiserror::Error;

#[derive(Debug, Error)]
pub enum FbError {
    #[error("gather format error in {field}: {msg}")]
    Format { field: String, msg: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },
    #[error("no comparable traces: no trace is picked in both series")]
    NoComparableTraces,
    #[error("no threshold reaches the minimum picking rate {apr_min}; achieved {achieved:?}")]
    AprUnreachable { apr_min: f64, achieved: Vec<(f64, f64)> },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Engine(#[from] fbpick_autograd::AutogradError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FbError>;

pub(crate) fn invalid<T>(what: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(FbError::Invalid { what, msg: msg.into() })
}
