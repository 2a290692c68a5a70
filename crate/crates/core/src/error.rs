use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),

    #[error("invalid mission: {0}")]
    InvalidMission(String),

    #[error("duplicate consecutive waypoints at index {index}")]
    DuplicateWaypoint { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Every violation found while validating a scenario, each prefixed with its field path.
    #[error("scenario validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("empty episode batch")]
    EmptyBatch,

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
