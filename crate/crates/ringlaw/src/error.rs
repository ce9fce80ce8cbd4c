use thiserror::Error;

/// Unified error type for the whole pipeline.
///
/// `exit_class` groups variants the way the CLI reports them: bad input or
/// configuration (exit 2) versus numerical failure inside a computation
/// (exit 1).
#[derive(Debug, Error)]
pub enum RingLawError {
    #[error("row {row} has (near-)zero variance; enable jitter or drop the row")]
    ZeroVarianceRow { row: String },

    #[error("matrix decomposition failed: {0}")]
    DecompositionFailure(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),

    #[error("spectrum is empty")]
    EmptySpectrum,

    #[error("insufficient history: window needs {needed} samples, stream has {have} ending at the requested time")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("unknown bus {0}")]
    UnknownBus(String),

    #[error("series too short: need more than {needed} points, have {have}")]
    SeriesTooShort { needed: usize, have: usize },

    #[error("time {time} is not present in the series")]
    TimeNotInSeries { time: u64 },

    #[error("interpolation needs at least one point")]
    EmptyPointSet,

    #[error("{path}:{line}: parse error: {msg}")]
    ParseError {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("validation failed: {0}")]
    ValidationError(String),

    #[error("line graph is disconnected: largest component has {component_size} of {total} buses")]
    DisconnectedGraph { component_size: usize, total: usize },

    #[error("{path}: row {row}: {msg}")]
    FormatError {
        path: String,
        row: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RingLawError {
    /// CLI exit code for this error: 2 for usage/validation problems,
    /// 1 for internal numerical failures.
    pub fn exit_class(&self) -> i32 {
        match self {
            RingLawError::DecompositionFailure(_) | RingLawError::EigenFailure(_) => 1,
            _ => 2,
        }
    }
}
