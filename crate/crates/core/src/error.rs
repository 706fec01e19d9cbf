use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI maps these onto exit codes: `Domain`, `Range`, `WidthMismatch` and
/// `InsufficientLength` are validation failures, `Overflow` and `Guard` are
/// guard trips, `Invariant` is an internal failure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("sequence too short: need {needed} bits, have {available}")]
    InsufficientLength { needed: u64, available: u64 },

    #[error("word width {found} does not match table width {expected}")]
    WidthMismatch { expected: u32, found: u32 },

    #[error("guard tripped: {0}")]
    Guard(String),

    #[error("distribution not normalized: total mass {0}")]
    Normalization(f64),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
