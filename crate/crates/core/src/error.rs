use std::path::PathBuf;

use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: file contains no triplets")]
    EmptyGraph(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown entity id {0}")]
    UnknownEntity(u32),

    #[error("unknown triplet index {0}")]
    UnknownTriplet(usize),

    #[error("no template for relation `{0}`")]
    MissingTemplate(String),

    #[error("triplet {0} has no timestamp but dates were requested")]
    MissingTimestamp(usize),

    #[error("no computable homophily: no entity has both a score and a scored neighbor")]
    NoComputableHomophily,

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("embedding provider has no vector for {} label(s): {}", .0.len(), .0.join(", "))]
    MissingEmbeddings(Vec<String>),

    #[error("embedding of `{0}` is the zero vector")]
    ZeroEmbedding(String),

    #[error("insufficient candidates: needed {needed}, only {available} available")]
    Shortfall { needed: usize, available: usize },

    #[error("could not sample enough simple {hops}-hop paths: wanted {wanted}, found {found}")]
    NotEnoughPaths {
        hops: usize,
        wanted: usize,
        found: usize,
    },

    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 oracle.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Oracle(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
