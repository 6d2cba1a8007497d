use std::io;

use sparsewpir_core::{Context, CoreError, KeywordType};
use thiserror::Error;

use crate::wire::ErrorCode;

#[derive(Debug, Error)]
pub enum IcfError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("server error ({code:?}): {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("context version changed; current is {}", .0.version)]
    ContextMismatch(Box<Context>),
    #[error("peer for {kind} unreachable: {reason}")]
    PeerUnreachable { kind: KeywordType, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, IcfError>;
