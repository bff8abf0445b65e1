use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the similarity pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    /// The centered part of an RSM (or of a Markov operator) vanishes, so
    /// every normalized measure is undefined.
    #[error("degenerate RSM: {0}")]
    DegenerateRsm(String),

    #[error("rbf bandwidth is degenerate: all rows coincide, median pairwise distance is 0")]
    DegenerateBandwidth,

    #[error("fusion depth {0} exceeds the maximum of {max}", max = crate::markov::MAX_FUSION_DEPTH)]
    FusionDepthExceeded(usize),

    /// A rank correlation was requested on a constant sequence.
    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("non-finite value at row {row}, col {col}")]
    Data { row: usize, col: usize },

    #[error("model '{model}' layer {layer}: {detail}")]
    Ingestion {
        model: String,
        layer: String,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable name used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DegenerateRsm(_) => "degenerate_rsm",
            Error::DegenerateBandwidth => "degenerate_bandwidth",
            Error::FusionDepthExceeded(_) => "fusion_depth_exceeded",
            Error::ZeroVariance(_) => "zero_variance",
            Error::Format { .. } => "format",
            Error::Data { .. } => "data",
            Error::Ingestion { .. } => "ingestion",
            Error::Io { .. } => "io",
        }
    }

    /// True for "no signal" conditions, as opposed to malformed input.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, Error::DegenerateRsm(_) | Error::ZeroVariance(_))
    }

    pub(crate) fn mismatch(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
