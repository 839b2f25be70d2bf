use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward called before any forward pass was recorded")]
    BackwardWithoutForward,

    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient passed to the optimizer (step {step})")]
    NonFiniteGradient { step: u64 },

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("generator exhausted {draws} draws without realizing cell {cell}")]
    GeneratorExhausted { cell: String, draws: usize },

    #[error("sentence pool for {cell} too small to draw {needed} distinct sentences")]
    PoolTooSmall { cell: String, needed: usize },

    #[error("word {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("token id {0} is not in the vocabulary")]
    UnknownToken(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("base model reached {accuracy:.4} test accuracy, below the {threshold:.2} gate")]
    BaseModelBelowThreshold { accuracy: f64, threshold: f64 },

    #[error("no mask configuration passed the {gate:.2} subnetwork gate ({candidates} candidates)")]
    SearchExhausted { gate: f64, candidates: usize },

    #[error("pruned base model reached {accuracy:.4}, below the {threshold:.2} gate")]
    PrunedBelowThreshold { accuracy: f64, threshold: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("no run records to summarize")]
    EmptyRecords,

    #[error("missing manifest for standard run at {0}")]
    MissingManifest(PathBuf),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
