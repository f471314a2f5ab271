use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("unexpected csv header: {0}")]
    Header(String),

    #[error("page {page_id}: column {column}: {message}")]
    Validation {
        page_id: String,
        column: String,
        message: String,
    },

    #[error("duplicate page_id {0}")]
    DuplicatePageId(String),

    #[error("host {0} was not seen at training time")]
    UnknownHost(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file: {0}")]
    Schema(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Csv {
                line,
                message: format!("{other:?}"),
            },
        }
    }
}
