use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io: {0}")]
    Stream(#[from] std::io::Error),

    #[error("{path}: header does not match schema {schema}: found [{found}]")]
    Schema {
        path: PathBuf,
        schema: &'static str,
        found: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{context} line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("group {group} has {size} vectors, need at least {needed}")]
    GroupTooSmall {
        group: String,
        size: usize,
        needed: usize,
    },

    #[error("vocabulary is empty at threshold {threshold}")]
    EmptyVocabulary { threshold: u64 },

    #[error("name {0:?} has no span in the question")]
    NameNotFound(String),

    #[error("distractor provider failed for mcq {mcq_id} / name {name}: {message}")]
    Provider {
        mcq_id: String,
        name: String,
        message: String,
    },

    #[error("scorer: {0}")]
    Scorer(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("coverage {coverage:.4} is below the floor {floor}")]
    CoverageBelowFloor { coverage: f64, floor: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
