use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {source}")]
    ConfigFile { path: String, source: serde_json::Error },

    #[error(transparent)]
    Core(#[from] rsa_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for a failed check, 2 for usage, configuration and I/O problems.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(rsa_core::Error::Diverged { .. }) => 1,
            _ => 2,
        }
    }
}
