use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain on which a coefficient or map is defined.
    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    /// A caller-side precondition was violated (non-tangent vector, bad grid, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid user configuration. `key` names the offending field.
    #[error("invalid configuration for `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("I/O error: {0}")]
    Io(String),

    /// A requested statistical or order check failed.
    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { what, detail: detail.into() }
    }

    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config { key: key.into(), detail: detail.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
