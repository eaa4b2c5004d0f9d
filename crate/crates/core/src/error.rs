use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("component {component} collapsed after {retries} random re-draws")]
    DegenerateComponent { component: usize, retries: usize },

    #[error("rank-deficient basis: column {column} collapsed during orthogonalization")]
    RankDeficient { column: usize },

    #[error("degenerate normalization at query row {query}")]
    DegenerateNormalization { query: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("refused: predicted {predicted_bytes} bytes exceeds budget of {budget_bytes} bytes")]
    ResourceRefused { predicted_bytes: u64, budget_bytes: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}
