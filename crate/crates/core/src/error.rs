use std::io;

use thiserror::Error;

pub type Result<R> = std::result::Result<R, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("bucket estimation failed: {0}")]
    Estimation(String),

    #[error("bucket {bucket} too large for capacity: m(1) = {memory} > {capacity}")]
    Calibration {
        bucket: usize,
        memory: f64,
        capacity: f64,
    },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("buffered stream producer failed: {0}")]
    Producer(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
