use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scenario too dense: no valid placement after {0} attempts")]
    TooDense(usize),
    #[error("lifecycle error: {0}")]
    Lifecycle(String),
    #[error(transparent)]
    Vision(#[from] crd_vision::VisionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("scenario file: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, WorldError>;
