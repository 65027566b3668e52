use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Parse(String),

    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },

    #[error(transparent)]
    Core(#[from] cavity_unravel::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures during a run,
    /// 1 for output I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Invalid { .. } => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(cavity_unravel::Error::Io(_)) | CliError::Io { .. } => 1,
            CliError::Core(_) => 2,
        }
    }
}
