use std::path::PathBuf;

use thiserror::Error;

use crate::matching::MatchError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("descriptor blob: {0}")]
    Blob(String),

    #[error("row count mismatch: blob declares {declared} rows but contains {actual}")]
    RowCountMismatch { declared: usize, actual: usize },

    #[error("count mismatch: manifest has {manifest} records, blob has {blob} rows")]
    CountMismatch { manifest: usize, blob: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("database is empty")]
    EmptyDatabase,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{what} line {line}: {msg}")]
    Csv {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("duplicate pair ({query}, {db})")]
    DuplicatePair { query: String, db: String },

    #[error(transparent)]
    Match(#[from] MatchError),

    #[error("shortlist for query {query:?} has {len} entries, need at least {need}")]
    ShortlistTooShort {
        query: String,
        len: usize,
        need: usize,
    },

    #[error("logistic fit needs both classes, got {positives} wrong and {negatives} correct")]
    SingleClass { positives: usize, negatives: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no positive samples in precision-recall input")]
    NoPositives,

    #[error("empty precision-recall curve")]
    EmptyCurve,

    #[error("no queries to evaluate")]
    NoQueries,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("query {query:?}: {source}")]
    Query {
        query: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_query(self, query: &str) -> Self {
        Error::Query {
            query: query.to_owned(),
            source: Box::new(self),
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Query { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
