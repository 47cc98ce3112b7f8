//! Error type shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("position ({0:.3}, {1:.3}, {2:.3}) outside scene")]
    OutsideScene(f64, f64, f64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
