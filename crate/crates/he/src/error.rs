use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("operands were created under different parameter sets")]
    ParamsMismatch,

    #[error("missing evaluation key: {0}")]
    MissingEvalKey(String),

    #[error("payload exceeds plaintext capacity: {0}")]
    CapacityExceeded(String),

    #[error("malformed plaintext frame: {0}")]
    MalformedPlaintext(String),

    #[error("deserialization failed: {0}")]
    Deserialize(String),
}

pub type Result<T> = std::result::Result<T, HeError>;
