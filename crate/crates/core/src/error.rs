use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unsupported IDX image geometry {rows}x{cols} (expected 28x28)")]
    BadGeometry { rows: usize, cols: usize },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("dataset too small: need {needed} samples, have {available}")]
    DatasetTooSmall { needed: usize, available: usize },

    #[error("empty batch or evaluation set")]
    Empty,

    #[error("partition index {index} out of range for {total} partitions")]
    PartitionOutOfRange { index: usize, total: usize },

    #[error("partition count mismatch: message has {message}, receiver expects {receiver}")]
    PartitionMismatch { message: usize, receiver: usize },

    #[error("malformed partition message: {0}")]
    MalformedMessage(String),

    #[error("parameters diverged (non-finite value at index {index})")]
    Diverged { index: usize },

    #[error("invalid topology parameters: {0}")]
    InvalidTopology(String),

    #[error("{generator} generator gave up after {attempts} attempts")]
    RetryExhausted { generator: &'static str, attempts: usize },

    #[error("invalid node id {node} (graph has {n} nodes)")]
    InvalidNode { node: usize, n: usize },

    #[error("f exceeds n ({f} > {n})")]
    TooManyByzantine { f: usize, n: usize },

    #[error("no honest nodes to evaluate")]
    NoHonestNodes,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
