use thiserror::Error;

pub type Result<T> = std::result::Result<T, EntacError>;

#[derive(Debug, Error)]
pub enum EntacError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear solve residual {residual:e} exceeds {limit:e} ({context})")]
    Residual {
        context: &'static str,
        residual: f64,
        limit: f64,
    },

    #[error("soft value iteration did not converge after {iterations} iterations (last change {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("non-finite logits at iteration {k}: {detail}")]
    NonFinite { k: usize, detail: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {message}")]
    Data { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EntacError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EntacError::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        EntacError::Shape(msg.into())
    }
}
