use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the labeling pipeline and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unit mismatch: slice durations {0} s and {1} s differ")]
    Unit(f64, f64),

    #[error("degenerate minimal sample (condition number {0:.3e})")]
    DegenerateSample(f64),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("egomotion estimation failed: best inlier fraction {best:.3} below required {required:.3}")]
    EstimationFailed { best: f64, required: f64 },

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("label mask requested for a rejected threshold decision ({0})")]
    RejectedDecision(&'static str),

    #[error("events out of order at index {index}: {previous} > {current}")]
    Ordering {
        index: usize,
        previous: f64,
        current: f64,
    },

    #[error("event at ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse failures for the binary raster and event formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unexpected file kind {found:?}, expected {expected:?}")]
    WrongKind { expected: char, found: char },

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("truncated header: {got} of {expected} bytes")]
    TruncatedHeader { expected: usize, got: usize },

    #[error("truncated payload: {got} of {expected} bytes")]
    TruncatedPayload { expected: u64, got: u64 },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(u64),

    #[error("header dimensions too large: {0}")]
    TooLarge(String),

    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Configuration parse failures. Every variant names the offending key.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("key `{key}`: expected {expected}")]
    Type { key: String, expected: &'static str },

    #[error("key `{key}`: value {value} out of range ({constraint})")]
    Range {
        key: String,
        value: String,
        constraint: &'static str,
    },
}
