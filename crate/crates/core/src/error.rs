use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Schema { line: usize, message: String },
    #[error("sample {id}: {message}")]
    Invariant { id: String, message: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("sample {id} has no plannable entities: {reason}")]
    Unplannable { id: String, reason: String },
    #[error("unknown entity {name:?}; available: {available:?}")]
    UnknownEntity { name: String, available: Vec<String> },
    #[error("input of {len} tokens exceeds positional capacity {max}")]
    Overflow { len: usize, max: usize },
    #[error("invalid plan literal {0:?}: expected occurrence, comprehensive or focus:<Name>")]
    PlanLiteral(String),
    #[error("coreference span [{start}, {end}) invalid for {n} tokens: {reason}")]
    CorefSpan {
        start: usize,
        end: usize,
        n: usize,
        reason: &'static str,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("ineligible exchange: {0}")]
    Ineligible(String),
    #[error("summaries not aligned with corpus; missing ids: {0:?}")]
    Alignment(Vec<String>),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
