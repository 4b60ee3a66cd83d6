use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error("{op}: shape mismatch, expected {expected}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("optimizer step called but no trainable parameter has a gradient")]
    MissingGradients,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AutogradError>;

pub(crate) fn shape_err<T>(op: &'static str, expected: impl Into<String>, got: &[usize]) -> Result<T> {
    Err(AutogradError::Shape {
        op,
        expected: expected.into(),
        got: got.to_vec(),
    })
}
