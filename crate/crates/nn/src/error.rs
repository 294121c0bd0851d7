pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("{op}: zero-norm vector")]
    ZeroVector { op: &'static str },

    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),

    #[error("unknown parameter {0:?}")]
    UnknownParam(String),

    #[error("backward: {0}")]
    Backward(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn arg_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::InvalidArgument {
        op,
        detail: detail.into(),
    }
}
