use std::io;
use std::path::{Path, PathBuf};

/// Failures of the file-format layer and the command-line driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}:{line}: {msg}", path.display())]
    Format { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    #[error(transparent)]
    Core(#[from] sesim_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), line, msg: msg.into() }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 2 config, 3 data, 4 numeric, 5 artifact.
    pub fn exit_code(&self) -> i32 {
        use sesim_core::Error as E;
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } | Error::Io { .. } => 3,
            Error::Artifact(_) => 5,
            Error::Core(e) => match e {
                E::Config(_) => 2,
                E::NonFinite { .. } | E::State(_) | E::UndefinedMetric(_) => 4,
                E::Argument(_) | E::Composition { .. } | E::InvalidGraph(_) => 3,
            },
        }
    }
}
