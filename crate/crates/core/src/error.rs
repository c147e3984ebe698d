use thiserror::Error;

/// Errors produced anywhere in the simulator stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{context}: {message}")]
    Validation { context: String, message: String },

    #[error("unknown workload set `{0}` (expected A, B or C)")]
    UnknownSet(String),

    #[error("task count {n} outside accepted range {min}..={max} (pass allow_any_n to override)")]
    TaskCountOutOfRange { n: usize, min: usize, max: usize },

    #[error("network `{0}` is not loaded")]
    MissingNetwork(String),

    #[error("tile allocation must be within 1..={max}, got {got}")]
    BadTileAllocation { got: u32, max: u32 },

    #[error("compute layer `{0}` has zero MACs")]
    ComputeLayerWithoutMacs(String),

    #[error("overlap tuning needs at least one sample")]
    NoTuningSamples,

    #[error("simulation exceeded the cycle cap {cap} (stuck task {task}, last event: {last_event})")]
    CycleCapExceeded {
        cap: u64,
        task: u64,
        last_event: String,
    },

    #[error("missing isolated latency for task {0}")]
    MissingIsolated(u64),

    #[error("metrics require a non-empty result set")]
    EmptyResults,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
