use p3li5_icf::IcfError;
use sparsewpir_core::{CoreError, KeywordType};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LeaError {
    #[error("capture has no {0} identifier")]
    KeywordMissing(KeywordType),
    #[error("invalid capture: {0}")]
    InvalidCapture(String),
    #[error("ε = {eps} exceeds the {d} dimensions of the cache")]
    EpsilonOutOfRange { eps: usize, d: usize },
    #[error("context kept changing across {0} attempts")]
    RetryExhausted(usize),
    #[error("key store: {0}")]
    KeyStore(String),
    #[error(transparent)]
    Server(#[from] IcfError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LeaError>;
