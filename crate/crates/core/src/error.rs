use sparsewpir_he::HeError;
use thiserror::Error;

use crate::agreement::Context;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("cell {cell} would hold more than {capacity} records")]
    CellOverflow { cell: usize, capacity: usize },
    #[error("record of {len} bytes exceeds the {max}-byte frame payload")]
    RecordTooLarge { len: usize, max: usize },
    #[error("event has no {0} identifier")]
    MissingKeyword(crate::event::KeywordType),
    #[error("context rejected: cell budget {budget} is below the collision bound {bound}")]
    ContextRejected { budget: usize, bound: usize },
    #[error("no parameter set for ring degree {n} and residual depth {depth}")]
    NoParameterSet { n: usize, depth: usize },
    #[error("context version {got} does not match current version {}", current.version)]
    ContextMismatch { got: u64, current: Box<Context> },
    #[error("unknown profile {0}")]
    UnknownProfile(String),
    #[error("profile {0} not found")]
    NotFound(String),
    #[error("hint coordinate {value} out of range for dimension {dim} of size {size}")]
    HintOutOfRange { dim: usize, value: u32, size: usize },
    #[error("profile does not fit the context: {0}")]
    ProfileMismatch(String),
    #[error("answer could not be decrypted: {0}")]
    DecryptionFailure(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
