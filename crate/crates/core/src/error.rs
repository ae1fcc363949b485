use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file content; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown code id: {0}")]
    UnknownCode(String),

    #[error("unknown ontology node: {0}")]
    UnknownNode(String),

    #[error("invalid ancestor level {level} for code at depth {depth}")]
    InvalidLevel { level: usize, depth: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm row {0} in cosine similarity")]
    ZeroNormRow(usize),

    #[error("degenerate mapping: {0}")]
    DegenerateMapping(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("fewer than 2 nonempty groups at level {0}")]
    TooFewGroups(usize),

    #[error("label {label} outside class range 0..{classes}")]
    InvalidLabel { label: usize, classes: usize },

    #[error("only one class present in labels")]
    SingleClass,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("backward called without a prior forward pass")]
    NoForwardCache,

    #[error("metric failed on {failed} of {total} bootstrap resamples")]
    BootstrapFailure { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
