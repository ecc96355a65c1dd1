use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("sample has no tokens")]
    EmptySample,
    #[error("accumulator has seen no samples")]
    EmptyAccumulator,
    #[error("hessian diagonal is identically zero")]
    DegenerateHessian,
    #[error("accumulator mode mismatch: expected {expected}, got {got}")]
    ModeMismatch { expected: &'static str, got: &'static str },
    #[error("token budget {budget} too small for length {length}")]
    BudgetTooSmall { budget: usize, length: usize },
    #[error("corpus has {available} tokens, {required} required")]
    CorpusTooSmall { available: usize, required: usize },
    #[error("malformed corpus: {0}")]
    MalformedCorpus(String),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 8]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    EmptyInput,
    #[error("layer sets differ: {0}")]
    MismatchedLayerSets(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
