use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("requested {requested} bytes of table storage, above the memory cap of {cap} bytes")]
    MemoryCap { requested: u64, cap: u64 },

    #[error("could not allocate {bytes} bytes of table storage")]
    Allocation { bytes: u64 },

    #[error("row index {index} out of range for table {table} with {rows} rows")]
    IndexOutOfRange { table: usize, index: u64, rows: u64 },

    #[error("malformed mini-batch: {0}")]
    BadBatch(String),

    #[error("trace does not match configuration: {0}")]
    TraceMismatch(String),

    #[error("trace format error: {0}")]
    Format(String),

    #[error("corrupted HistoryTable: row {row} has delay {delay} at iteration {iter}")]
    CorruptHistory { row: u64, iter: u64, delay: i64 },

    #[error("noise delay must be at least 1")]
    ZeroDelay,

    #[error("lazy step at iteration {iter} needs the next mini-batch")]
    MissingNextBatch { iter: u64 },

    #[error("step called with algorithm {actual}, trainer was built for {expected}")]
    WrongAlgorithm {
        expected: String,
        actual: &'static str,
    },

    #[error("training already ran all {iters} iterations")]
    TrainingComplete { iters: u64 },

    #[error("finalize called at iteration {iter}, before the last iteration {iters}")]
    FinalizeEarly { iter: u64, iters: u64 },

    #[error("finalize already ran")]
    AlreadyFinalized,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}
