use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] teamregret::Error),

    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("plot: {0}")]
    Plot(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Metrics(e.to_string())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
