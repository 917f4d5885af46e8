use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum AmpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A caller broke a declared interface contract (width mismatch, bad shape).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A protocol transition received a message no rule accepts.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// A protocol run failed to make progress (safety cap hit, quiescence missed).
    #[error("protocol failure: {0}")]
    ProtocolFailure(String),

    #[error("numeric failure at step {step}: {message}")]
    NumericFailure { step: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl AmpError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        AmpError::InvalidArgument(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        AmpError::ContractViolation(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        AmpError::ProtocolViolation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, AmpError>;
