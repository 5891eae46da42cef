use thiserror::Error;

use crate::checkpoint::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An operation was called in the wrong order, e.g. backward before forward.
    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate test input: {0}")]
    DegenerateTest(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("batch contract violation: {0}")]
    BatchContract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("digest mismatch: file is corrupted")]
    DigestMismatch,

    #[error("malformed file: {0}")]
    Format(String),

    /// Training produced a non-finite cost; carries the best checkpoint seen so far.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        last_good: Box<Checkpoint>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
