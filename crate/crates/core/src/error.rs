use std::io;

/// Errors produced by the index, its storage and its snapshot codec.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("duplicate key: {0}")]
    DuplicateKey(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("graph corruption: {0}")]
    GraphCorruption(String),

    #[error("store schema conflict: {0}")]
    StoreSchema(String),

    #[error("storage error: {0}")]
    Storage(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("snapshot corruption: {0}")]
    SnapshotCorruption(String),

    #[error("unsupported snapshot format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("index build incomplete: {0}")]
    IncompleteBuild(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! storage_from {
    ($($ty:ty),* $(,)?) => {
        $(
            impl From<$ty> for Error {
                fn from(err: $ty) -> Self {
                    Error::Storage(err.to_string())
                }
            }
        )*
    };
}

storage_from!(
    redb::Error,
    redb::TransactionError,
    redb::TableError,
    redb::CommitError,
);

impl From<redb::StorageError> for Error {
    fn from(err: redb::StorageError) -> Self {
        match err {
            redb::StorageError::Io(io) => Error::Io(io),
            other => Error::Storage(other.to_string()),
        }
    }
}

impl From<redb::DatabaseError> for Error {
    fn from(err: redb::DatabaseError) -> Self {
        match err {
            redb::DatabaseError::Storage(storage) => storage.into(),
            other => Error::Storage(other.to_string()),
        }
    }
}
