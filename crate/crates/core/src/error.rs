use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("cannot parse value {value:?} at row {row}, column {col}")]
    UnparsableValue {
        row: usize,
        col: usize,
        value: String,
    },

    #[error("label column is not binary; distinct values found: {0:?}")]
    LabelNotBinary(Vec<String>),

    #[error("label column {0:?} not present")]
    UnknownLabelColumn(String),

    #[error("dataset is invalid: {0}")]
    InvalidDataset(String),

    #[error("split could not satisfy both-class training sets: {0}")]
    DegenerateSplit(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("both classes must be present (found only label {0:+})")]
    SingleClass(i8),

    #[error("no same-label pairs: both classes are singletons")]
    NoSameLabelPairs,

    #[error("lipschitz model has no anchors")]
    EmptyAnchors,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("symmetric eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    EigenFailure { sweeps: usize, off_norm: f64 },

    #[error("factorization of the normal-equation matrix failed")]
    FactorizationFailure,

    #[error("bisection bracket [{lo}, {hi}] does not contain a root")]
    BisectionBracketFailure { lo: f64, hi: f64 },

    #[error("bound precondition n >= D/(34e) not met: n = {n}, required n >= {required_n}")]
    ConditionNotMet { n: u64, required_n: f64 },

    #[error("instance too large for the reference oracle: {0}")]
    InstanceTooLarge(String),

    #[error("{method}: {failed} of {repeats} splits failed (first failure: {first})")]
    ExperimentAborted {
        method: String,
        failed: usize,
        repeats: usize,
        first: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
