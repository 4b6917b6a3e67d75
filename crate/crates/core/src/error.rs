use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures decoding a dataset or checkpoint container.
///
/// Each variant carries a stable numeric code (see [`FormatError::code`]) that
/// is part of the documented file contract and is surfaced through the C API.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

impl FormatError {
    pub fn code(&self) -> i32 {
        match self {
            FormatError::CorruptHeader(_) => 10,
            FormatError::UnsupportedVersion { .. } => 11,
            FormatError::DimensionOverflow(_) => 12,
            FormatError::TruncatedPayload(_) => 13,
            FormatError::InvalidRecord(_) => 14,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        dim: String,
        expected: String,
        found: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Process exit status for this error: 1 usage or configuration, 2 data,
    /// 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Shape { .. } | Error::Io { .. } | Error::Format { .. } | Error::Data(_) => 2,
            Error::NonFinite(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
