use thiserror::Error;

pub type Result<T> = std::result::Result<T, CkksError>;

#[derive(Debug, Error)]
pub enum CkksError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("vector of length {len} exceeds slot capacity {slots}")]
    Capacity { len: usize, slots: usize },

    #[error("depth exhausted in {op}: ciphertext at level {level} needs {needed} more level(s)")]
    Depth {
        op: &'static str,
        level: usize,
        needed: usize,
    },

    #[error("operands at levels {a} and {b} cannot be aligned for {op}")]
    LevelMismatch { op: &'static str, a: usize, b: usize },

    #[error("no rotation key composes step {0}")]
    MissingRotationKey(i64),

    #[error("backend mismatch: {0}")]
    Backend(String),

    #[error("parameter mismatch: {0}")]
    ParamsMismatch(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("non-finite value in slot {0}")]
    NonFinite(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
