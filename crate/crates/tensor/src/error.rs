use thiserror::Error;

use crate::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("unsupported configuration in {op}: {detail}")]
    Config { op: &'static str, detail: String },

    #[error("state error in {op}: {detail}")]
    State { op: &'static str, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("data length {len} does not match shape {shape}")]
    DataLength { len: usize, shape: Shape },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}
