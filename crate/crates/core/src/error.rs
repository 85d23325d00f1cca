use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed file contents. `offset` is a byte offset when known.
    #[error("format error{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format { message: String, offset: Option<u64> },

    #[error("unsupported checkpoint version: expected {expected}, found {found}")]
    Version { expected: u32, found: u64 },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>, offset: Option<u64>) -> Self {
        Error::Format {
            message: msg.into(),
            offset,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::EmptyInput(_) | Error::Config(_) => 2,
            Error::Format { .. } | Error::Version { .. } | Error::Io(_) => 3,
            Error::Numeric(_) | Error::DegenerateBatch(_) | Error::DegenerateFeature(_) => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            return Error::Io(e.into());
        }
        Error::format(e.to_string(), None)
    }
}
