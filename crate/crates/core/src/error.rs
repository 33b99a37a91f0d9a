use thiserror::Error;

#[derive(Debug, Error)]
pub enum KfpError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupted state: {0}")]
    CorruptedState(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("CFL violation: dt = {dt:e} exceeds the transport limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("negative density {value:e} produced by {stage}")]
    Negativity { stage: &'static str, value: f64 },

    #[error("invalid scenario at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("step failed at t = {t}: {source}")]
    Step {
        t: f64,
        #[source]
        source: Box<KfpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KfpError>;

pub(crate) fn config_err(path: impl Into<String>, message: impl Into<String>) -> KfpError {
    KfpError::Config {
        path: path.into(),
        message: message.into(),
    }
}
