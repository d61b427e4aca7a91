use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),

    #[error("invalid tool name `{name}`: {reason}")]
    InvalidToolName { name: String, reason: &'static str },

    #[error("invalid tool spec `{name}`: {reason}")]
    InvalidToolSpec { name: String, reason: String },

    #[error("unknown tool `{0}`")]
    UnknownTool(String),

    #[error("fused token id {id} out of range (fused vocabulary size {size})")]
    TokenOutOfRange { id: u32, size: u32 },

    #[error("unknown word token id {id} (vocabulary size {size})")]
    UnknownToken { id: u32, size: u32 },

    #[error("context length {len} exceeds limit {limit}")]
    ContextTooLong { len: usize, limit: usize },

    #[error("empty input sequence")]
    EmptySequence,

    #[error("scripted backend has no entry for context {0:?}")]
    ScriptMiss(Vec<u32>),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("call span [{start}, {end}) does not align with token boundaries in {text:?}")]
    SpanMisaligned { start: usize, end: usize, text: String },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("operand sampling for `{op}` failed after {attempts} attempts")]
    SamplingExhausted { op: String, attempts: usize },

    #[error("every token is masked during {0}")]
    NothingAllowed(&'static str),

    #[error("no question template for relation `{0}`")]
    MissingTemplate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: corrupt header: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: truncated data: {reason}")]
    Truncated { path: PathBuf, reason: String },

    #[error("fingerprint mismatch: checkpoint was trained against {expected}, backend is {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("no supervised toolken positions in training data")]
    EmptySupervision,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{tool}: cannot parse arguments {raw:?}: {reason}")]
    ArgParse { tool: String, raw: String, reason: String },

    #[error("{tool}({args}): {reason}")]
    Exec { tool: String, args: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Data { path: PathBuf, line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    RawIo(#[from] io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
