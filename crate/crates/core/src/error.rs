use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("masked softmax: row {row} has every entry forbidden")]
    AllForbidden { row: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("index {index} out of range for {what} (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty batch")]
    EmptyBatch,
    #[error("no preceding utterance for negative sampling")]
    NoPrecedingUtterance,
    #[error("invalid conversation `{id}`: {reason}")]
    InvalidConversation { id: String, reason: String },
    #[error("sequence of length {len} exceeds max_pos {max_pos}")]
    PositionOverflow { len: usize, max_pos: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
