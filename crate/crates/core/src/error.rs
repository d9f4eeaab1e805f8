use std::io;

use thiserror::Error;

use crate::model::{MethodId, ThreadId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("method {id} is already registered as `{existing}`, refusing `{attempted}`")]
    ConflictingRegistration { id: MethodId, existing: String, attempted: String },
    #[error("method {0} has an empty method name")]
    EmptyMethodName(MethodId),
}

/// A line that could not be decoded as an ingest message.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed message: {0}")]
pub struct MalformedMessage(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("batch for thread {thread} starts at {first_us}us, before last seen {last_seen_us}us ({dropped} events dropped)")]
    OutOfOrderBatch { thread: ThreadId, first_us: u64, last_seen_us: u64, dropped: usize },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("line {line}: {source}")]
    Malformed { line: usize, source: MalformedMessage },
    #[error("line 1: trace file must start with a session record")]
    MissingSessionMeta,
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("cannot lay out an empty registry")]
    EmptyRegistry,
}

/// Errors surfaced by the operator-facing entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error(transparent)]
    Trace(#[from] TraceFileError),
    #[error(transparent)]
    Malformed(#[from] MalformedMessage),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code: 1 usage, 2 I/O, 3 protocol.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::ConnectionRefused(_) | Error::Io(_) => 2,
            Error::Trace(TraceFileError::Io(_)) => 2,
            Error::Trace(_) | Error::Malformed(_) | Error::Layout(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
