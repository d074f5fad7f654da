//! Error categories shared across the crate.
//!
//! Every category maps to a distinct process exit code in the CLI, so batch
//! drivers can tell a mistyped config from a blown-up path.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid domain/noise/run configuration (bad sizes, dealiasing too coarse,
    /// noise mode outside the resolved span, ...).
    Config(String),
    /// Shape mismatch between fields or between a field and its domain.
    Dimension(String),
    /// Out-of-range mode or noise index.
    Index(String),
    /// Physical-regime violation (the model requires T > Tc).
    Regime(String),
    /// Noise decay too slow for a finite W^{1,inf} ledger sum.
    Summability(String),
    /// A trajectory produced a non-finite coefficient at the given step.
    BlowUp { step: usize },
    /// Not enough data for the requested statistic.
    Stats(String),
    /// Feature outside the supported problem class (e.g. 3-d domains).
    Unsupported(String),
    /// Config text could not be parsed; `line` is 1-based.
    Parse { line: usize, msg: String },
    /// Config parsed but a key failed validation.
    Validation { key: String, msg: String },
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Regime(m) => write!(f, "regime error: {m}"),
            Error::Summability(m) => write!(f, "summability error: {m}"),
            Error::BlowUp { step } => {
                write!(f, "blow-up: non-finite coefficient at step {step}")
            }
            Error::Stats(m) => write!(f, "statistics error: {m}"),
            Error::Unsupported(m) => write!(f, "unsupported: {m}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::Validation { key, msg } => write!(f, "invalid `{key}`: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Stable process exit code for the category (0 is success, 1 reserved
    /// for panics, 2 for CLI usage errors).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 3,
            Error::Validation { .. } => 4,
            Error::Config(_) => 5,
            Error::Regime(_) => 6,
            Error::Summability(_) => 7,
            Error::Dimension(_) => 8,
            Error::Index(_) => 9,
            Error::BlowUp { .. } => 10,
            Error::Stats(_) => 11,
            Error::Unsupported(_) => 12,
            Error::Io(_) => 13,
        }
    }
}
