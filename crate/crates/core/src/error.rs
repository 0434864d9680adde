//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic, unsupported version, malformed header or schema.
    #[error("format error: {0}")]
    Format(String),

    /// Payload shorter or longer than its header declares, or indices out of range.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// Non-finite value found in a payload or argument.
    #[error("non-finite value at index {index}: {value}")]
    NonFinite { index: usize, value: f32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Input outside the mathematical domain of an operation (e.g. negative χ² input).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad category used by front-ends to pick exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Parameter(_) => ErrorCategory::Usage,
            Error::Io { .. }
            | Error::Format(_)
            | Error::Corruption(_)
            | Error::NonFinite { .. }
            | Error::Shape(_)
            | Error::EmptyInput(_)
            | Error::InsufficientData(_)
            | Error::Domain(_) => ErrorCategory::Data,
            Error::Degenerate(_) | Error::Numeric(_) => ErrorCategory::Numeric,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::NonFinite { .. } => "non_finite",
            Error::Shape(_) => "shape",
            Error::Parameter(_) => "parameter",
            Error::InsufficientData(_) => "insufficient_data",
            Error::EmptyInput(_) => "empty_input",
            Error::Degenerate(_) => "degenerate",
            Error::Domain(_) => "domain",
            Error::Numeric(_) => "numeric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}

/// Returns the first non-finite element of `values`, as an error.
pub(crate) fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}
