use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum RkrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incompatible adapter set: {0}")]
    Incompatible(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("audit error: {0}")]
    Audit(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RkrError {
    /// Process exit code used by the command-line driver.
    ///
    /// 2 marks bad input (config, file format), 3 marks a broken invariant,
    /// 1 covers everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RkrError::Config(_) | RkrError::Format(_) | RkrError::Json(_) => 2,
            RkrError::Invariant(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, RkrError>;

pub(crate) fn dim_err(msg: impl Into<String>) -> RkrError {
    RkrError::Dimension(msg.into())
}
