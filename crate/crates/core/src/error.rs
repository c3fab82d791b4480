use std::path::PathBuf;

use thiserror::Error;

use crate::pipeline::QueryResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("document {0:?} is empty")]
    EmptyDocument(String),

    #[error("invalid chunking: overlap {overlap} must be smaller than size {size}")]
    InvalidChunking { size: usize, overlap: usize },

    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),

    #[error("malformed input record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("cannot embed empty text")]
    EmptyText,

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("provider contract violated: {0}")]
    ProviderContract(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("non-finite vector component")]
    NonFinite,

    #[error("persistence error at line {line}: {message}")]
    Persistence { line: usize, message: String },

    #[error("training data needs at least two distinct labels")]
    DegenerateLabels,

    #[error("training data is empty")]
    EmptyTraining,

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("model file rejected: {0}")]
    ModelVersion(String),

    #[error("could not parse relations from model output: {0}")]
    RelationParse(String),

    #[error("generation unavailable: {message}")]
    GenerationUnavailable {
        message: String,
        /// Retrieval evidence gathered before generation failed.
        evidence: Option<Box<QueryResult>>,
    },

    #[error("chunk {chunk_id:?} already attached to {existing:?}, refusing {requested:?}")]
    ChunkReattachment {
        chunk_id: String,
        existing: String,
        requested: String,
    },

    #[error("unknown chunk {0:?}")]
    UnknownChunk(String),

    #[error("relation ({subject}, {object}) violates provenance of chunk {chunk_id:?}")]
    ProvenanceViolation {
        subject: String,
        object: String,
        chunk_id: String,
    },

    #[error("invalid relation: {0}")]
    InvalidRelation(String),

    #[error("graph integrity error at record {line}: {message}")]
    GraphIntegrity { line: usize, message: String },

    #[error("nothing to evaluate")]
    EmptyEval,

    #[error("query is empty")]
    EmptyQuery,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
