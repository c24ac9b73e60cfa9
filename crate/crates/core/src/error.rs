use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("integer overflow in {0}")]
    Overflow(String),
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("missing layer tag: {0}")]
    MissingLayer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
