//! Error taxonomy shared by the library and the CLI exit-code mapping.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration or arguments (bad ratios, k > N, missing path...).
    Config(String),
    /// Data ingestion problems: unparseable cells, ragged rows, short ranges.
    Load(String),
    /// Metric undefined for the given inputs (e.g. zero-variance target).
    Metric(String),
    /// Numeric failure at runtime (non-finite or diverging loss).
    Numeric(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Load(m) => write!(f, "data error: {m}"),
            Error::Metric(m) => write!(f, "metric error: {m}"),
            Error::Numeric(m) => write!(f, "numeric failure: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
