use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the operation's admissible set.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// Warp function or interface weight stopped being positive.
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// The requested combination is outside what the catalog supports.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("non-positive state: {0}")]
    NonPositive(String),

    /// Scenario configuration problem, carrying the offending key path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
