use thiserror::Error;

/// Errors raised by the model, bounds and data layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("kernel matrix K_mm + jitter*I is not positive definite (jitter = {jitter:e}); try a larger jitter")]
    SingularKernel { jitter: f64 },

    #[error("bound matrix B is not positive definite")]
    SingularBound,

    #[error("invalid variational state: {0}")]
    InvalidState(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid label {0}: expected two classes mapped onto -1/+1")]
    InvalidLabel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { what, left, right });
    }
    Ok(())
}
