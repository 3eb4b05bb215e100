use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite values in {0}")]
    Numeric(String),
    #[error("replay buffer not ready: {have} transitions, need {need}")]
    NotReady { have: usize, need: usize },
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("latent layout mismatch: checkpoint has {found}, expected {expected}")]
    Layout { found: String, expected: String },
    #[error("malformed episode record: {0}")]
    MalformedRecord(String),
    #[error("empty evaluation suite")]
    EmptySuite,
    #[error(transparent)]
    Diff(#[from] crd_diffcore::DiffError),
    #[error(transparent)]
    World(#[from] crd_world::WorldError),
    #[error(transparent)]
    Vision(#[from] crd_vision::VisionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
