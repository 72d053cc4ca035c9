use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CkksError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("value out of encoding range: {0}")]
    Range(String),
    #[error("scale mismatch: {left} vs {right}")]
    ScaleMismatch { left: f64, right: f64 },
    #[error("level mismatch: {left} vs {right}")]
    LevelMismatch { left: usize, right: usize },
    #[error("multiplicative depth exhausted at level {level}")]
    DepthExhausted { level: usize },
    #[error("decryption integrity check failed: noise budget {budget_bits:.1} bits")]
    DecryptionIntegrity { budget_bits: f64 },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}

pub type Result<T> = std::result::Result<T, CkksError>;
