use hefl_ckks::CkksError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure in {layer}: {message}")]
    Numeric { layer: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("round {round}, client {client}: {source}")]
    Client {
        round: usize,
        client: usize,
        #[source]
        source: Box<CoreError>,
    },
    #[error("crypto error: {0}")]
    Crypto(#[from] CkksError),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
}

/// Coarse error classes, used by the CLI for its exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Config,
    Crypto,
    Numeric,
    Io,
}

impl CoreError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn numeric(layer: impl Into<String>, message: impl Into<String>) -> Self {
        CoreError::Numeric {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            CoreError::Usage(_) | CoreError::Lookup(_) => ErrorClass::Usage,
            CoreError::Config(_) | CoreError::Protocol(_) | CoreError::Format(_) => ErrorClass::Config,
            CoreError::Numeric { .. } => ErrorClass::Numeric,
            CoreError::Crypto(_) => ErrorClass::Crypto,
            CoreError::Io { .. } => ErrorClass::Io,
            CoreError::Client { source, .. } => source.class(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
