use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary file contains no labels")]
    EmptyVocabulary,
    #[error("duplicate label {name:?} on lines {first} and {second}")]
    DuplicateLabel {
        name: String,
        first: usize,
        second: usize,
    },
    #[error("malformed vocabulary line {0}")]
    MalformedLine(usize),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("k = {k} exceeds the vocabulary size {vocab_size}")]
    KTooLarge { k: usize, vocab_size: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("k = {k} exceeds the subset lattice limit {k_max}")]
    SubsetExplosion { k: usize, k_max: usize },
    #[error("lookup index {index} out of range for a table of {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("numerical error: {0}")]
    NumericalError(String),
    #[error("embedding row {row} is not unit norm (norm {norm})")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("prompt has k = {prompt_k} but lookup table has k = {table_k}")]
    KMismatch { prompt_k: usize, table_k: usize },
    #[error("incomplete run: {} prompt(s) with missing records, e.g. {:?}", .0.len(), .0.first())]
    IncompleteRun(Vec<MissingRecords>),

    #[error("source image {index} has a zero dimension")]
    InvalidSize { index: usize },
    #[error("failed to load image {path}: {reason}")]
    ImageLoadError { path: PathBuf, reason: String },
    #[error("no corpus images for label {0:?}")]
    MissingClassImages(String),

    #[error("row {0} is not a probability distribution")]
    InvalidDistribution(usize),
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPositiveSemiDefinite(f64),

    #[error("contingency table retains {rows} row(s) and {cols} column(s); need at least 2 of each")]
    DegenerateTable { rows: usize, cols: usize },
    #[error("protocol error: {0}")]
    ProtocolError(String),

    #[error("mock backend cannot resolve: {0}")]
    MockResolutionError(String),
    #[error("model bundle {dir} is missing {missing:?}")]
    BundleIncomplete { dir: PathBuf, missing: Vec<String> },
    #[error("bundle mismatch: {0}")]
    BundleMismatch(String),
    #[error("backend error: {0}")]
    Backend(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A prompt whose image records were not all present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingRecords {
    pub prompt_id: u64,
    pub expected: usize,
    pub found: usize,
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            KTooLarge { .. } | InvalidParameter(_) | SubsetExplosion { .. } => ErrorClass::Config,
            DimensionMismatch { .. }
            | NumericalError(_)
            | NotUnitNorm { .. }
            | NotSymmetric(_)
            | NotPositiveSemiDefinite(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
