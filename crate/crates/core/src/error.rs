use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("sequence too short: length {len} < required {required}")]
    SequenceTooShort { len: usize, required: usize },

    #[error("pooling window {window} exceeds input length {len}")]
    Pooling { window: usize, len: usize },

    #[error("empty sequence: input contains no non-pad tokens")]
    EmptySequence,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("comment empty after character filtering")]
    EmptyAfterFilter,

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("kappa undefined: expected agreement is 1 but observed agreement is not")]
    KappaUndefined,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
