use thiserror::Error;

/// Errors produced by the engine, data pipeline, and metrics.
///
/// `Data`-flavored variants indicate malformed inputs or configuration;
/// `NonFinite` and `NanGradient` indicate numeric failure and map to a
/// distinct process exit code in the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid axis {axis} for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },

    #[error("axis {axis} of shape {shape:?} is empty")]
    EmptyAxis { axis: usize, shape: Vec<usize> },

    #[error("label {label} out of range [0, {classes}) at index {index}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("length {len} not divisible by {divisor}; pad the sequence to {padded}")]
    NotDivisible {
        len: usize,
        divisor: usize,
        padded: usize,
    },

    #[error("band length mismatch at level {level}: expected {expected}, got {got}")]
    BandLength {
        level: usize,
        expected: usize,
        got: usize,
    },

    #[error("expected temporal length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("tape already consumed by backward; record a fresh pass first")]
    StaleTape,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("NaN gradient for parameter '{name}'")]
    NanGradient { name: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("empty sequence passed to {op}")]
    EmptySequence { op: &'static str },
}

impl Error {
    /// True for numeric failures (NaN/Inf); everything else is a data or
    /// configuration problem.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NanGradient { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
