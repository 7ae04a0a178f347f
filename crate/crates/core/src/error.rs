use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::backing::BlockId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("file `{0}` already exists")]
    DuplicatePath(String),

    #[error("no such file `{0}`")]
    NotFound(String),

    #[error("file `{0}` is sealed")]
    Sealed(String),

    #[error("file `{0}` is not sealed")]
    NotSealed(String),

    #[error(
        "read of {length} bytes at offset {offset} is out of range for `{path}` ({file_len} bytes)"
    )]
    OutOfRange {
        path: String,
        offset: u64,
        length: u64,
        file_len: u64,
    },

    #[error("block {block_id} (ordinal {ordinal} of `{path}`) is not resident in the memory tier")]
    NotResident {
        path: String,
        ordinal: u32,
        block_id: BlockId,
    },

    #[error("block {block_id} (ordinal {ordinal} of `{path}`) was evicted before being checkpointed; its data is lost")]
    DataLoss {
        path: String,
        ordinal: u32,
        block_id: BlockId,
    },

    #[error("tier capacity exceeded: need {needed} bytes, at most {available} can be freed")]
    Capacity { needed: u64, available: u64 },

    #[error("unknown block {0}")]
    UnknownBlock(BlockId),

    #[error("stripe {seq} of block {block_id} is missing on server {server}")]
    MissingStripe {
        block_id: BlockId,
        seq: u32,
        server: usize,
    },

    #[error("checksum mismatch on {what}: expected {expected:016x}, found {found:016x}")]
    Integrity {
        what: String,
        expected: u64,
        found: u64,
    },

    #[error("put of block {block_id} failed after writing {written} of {total} stripes: {source}")]
    PartialPut {
        block_id: BlockId,
        written: usize,
        total: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed manifest {path}:{line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Short machine-readable class of the error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Invalid(_) => "invalid",
            Error::DuplicatePath(_) => "duplicate-path",
            Error::NotFound(_) => "not-found",
            Error::Sealed(_) => "sealed",
            Error::NotSealed(_) => "not-sealed",
            Error::OutOfRange { .. } => "out-of-range",
            Error::NotResident { .. } => "not-resident",
            Error::DataLoss { .. } => "data-loss",
            Error::Capacity { .. } => "capacity",
            Error::UnknownBlock(_) => "unknown-block",
            Error::MissingStripe { .. } => "missing-stripe",
            Error::Integrity { .. } => "integrity",
            Error::PartialPut { .. } => "partial-put",
            Error::Manifest { .. } => "manifest",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
