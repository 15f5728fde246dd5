use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown label '{token}' at line {line}")]
    UnknownLabel { token: String, line: usize },

    #[error("duplicate id '{0}'")]
    DuplicateId(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown document id '{0}'")]
    UnknownDoc(String),

    #[error("invalid target group: {0}")]
    InvalidTarget(String),

    #[error("insufficient annotated examples: need {needed}, have {available}")]
    InsufficientAnnotated { needed: usize, available: usize },

    #[error("template error: {0}")]
    Template(String),

    #[error("unparseable reply: {message}")]
    UnparseableReply { message: String, raw_reply: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("example '{id}': {source}")]
    ForExample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing decisions for ids: {}", .0.join(", "))]
    MissingItems(Vec<String>),

    #[error("index file: {0}")]
    IndexFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn for_example(id: impl Into<String>, source: Error) -> Self {
        Error::ForExample {
            id: id.into(),
            source: Box::new(source),
        }
    }

    /// True when the error originates from the classification backend
    /// (transport, retries exhausted, or an unusable reply).
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Backend(_) | Error::UnparseableReply { .. } => true,
            Error::ForExample { source, .. } => source.is_backend(),
            _ => false,
        }
    }

    /// Process exit code: 2 for data errors, 3 for backend errors.
    pub fn exit_code(&self) -> i32 {
        if self.is_backend() {
            3
        } else {
            2
        }
    }
}
