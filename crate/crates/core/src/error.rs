use thiserror::Error;

/// Errors surfaced by game construction, validation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A modeling assumption required by the convergence guarantees failed
    /// (e.g. the pseudo-gradient is not strongly monotone).
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("step-size validation failed: {0}")]
    StepSize(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
