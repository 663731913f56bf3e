use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("ROI column {0} has zero variance")]
    ConstantSeries(usize),
    #[error("invalid FC matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("split too small: {0}")]
    TooSmall(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: expected {expected}x{expected} matrix, found {rows}x{cols}")]
    DimensionMismatch { path: PathBuf, expected: usize, rows: usize, cols: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate vector (norm {0:e})")]
    DegenerateVector(f64),
    #[error("prototype norm {0:e} is too small to rescale")]
    DegeneratePrototype(f64),
    #[error("probability of label is not positive: {0}")]
    Domain(f64),
    #[error("no sample in the batch has an opposite-class partner")]
    NoValidPairs,
    #[error("no subject was classified correctly")]
    EmptyFilter,
    #[error("subject {subject} excluded: {reason}")]
    FilterFail { subject: String, reason: String },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("need at least {needed} patients, have {have}")]
    TooFewPatients { needed: usize, have: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
