use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backends::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}:{line}: parse error: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("stage `{stage}` has not been run: {} is missing", path.display())]
    MissingPrerequisite { stage: &'static str, path: PathBuf },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("run directory {} already exists; pass --resume to continue it", .0.display())]
    RunExists(PathBuf),

    #[error("backend health check failed for `{role}`: {message}")]
    Health { role: String, message: String },

    #[error("dangling references: {}", .0.join(", "))]
    Dangling(Vec<String>),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    /// Short machine-readable tag used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Image { .. } => "image",
            Error::Backend(_) => "backend",
            Error::MissingPrerequisite { .. } => "missing_prerequisite",
            Error::Config(_) => "config",
            Error::RunExists(_) => "run_exists",
            Error::Health { .. } => "backend_health",
            Error::Dangling(_) => "dangling_reference",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Error::MissingPrerequisite { .. } => 2,
            Error::Health { .. } => 3,
            _ => 1,
        }
    }
}
