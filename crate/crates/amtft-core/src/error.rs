use thiserror::Error;

/// Errors surfaced by simulation, training, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action {action} for player {player} (action set size {limit})")]
    InvalidAction {
        player: usize,
        action: usize,
        limit: usize,
    },

    #[error("observation shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("rollout budget is empty (B={replicates}, M={horizon})")]
    EmptyRolloutBudget { replicates: usize, horizon: usize },

    #[error("punishment target must be positive, got {0}")]
    NonPositiveTarget(f64),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("augmented state space exceeded cap of {cap} (reached {reached})")]
    StateSpaceCap { cap: usize, reached: usize },

    #[error("solver failed to converge within {0} iterations")]
    NoConvergence(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
