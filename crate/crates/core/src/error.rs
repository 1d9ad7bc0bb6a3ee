use std::path::PathBuf;

/// Coarse failure class, used by callers (notably the CLI) to pick exit codes
/// without matching on every variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent input data, files, or configuration.
    Data,
    /// Numerical failure during computation (divergence, instability,
    /// non-finite intermediate values, non-convergence).
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {why}")]
    Format { path: PathBuf, why: String },

    #[error("numerical failure in {what}: {why}")]
    Numerical { what: &'static str, why: String },
}

impl Error {
    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid { what, why: why.into() }
    }

    pub fn numerical(what: &'static str, why: impl Into<String>) -> Self {
        Error::Numerical { what, why: why.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, why: impl Into<String>) -> Self {
        Error::Format { path: path.into(), why: why.into() }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numerical { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
