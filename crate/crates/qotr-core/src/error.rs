use thiserror::Error;

/// Errors raised by tensor operations and model construction.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes; the message names both operands.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Invalid grid or model configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Patch placement produced impossible coverage.
    #[error("geometry error: {0}")]
    Geometry(String),
    /// Malformed tensor-table file.
    #[error("serialization error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join(", "))
}
