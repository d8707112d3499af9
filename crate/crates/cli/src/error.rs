use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input not found: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("output directory {} is locked by another run (remove {} if stale)", .dir.display(), .lock.display())]
    Locked { dir: PathBuf, lock: PathBuf },

    #[error("invalid option: {0}")]
    Option(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] changerisk::Error),

    #[error(transparent)]
    Service(#[from] changerisk_service::ServiceError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier printed in the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingInput(_) => "missing_input",
            CliError::Locked { .. } => "output_locked",
            CliError::Option(_) => "invalid_option",
            CliError::Io { .. } => "io",
            CliError::Core(changerisk::Error::FingerprintMismatch { .. }) => "fingerprint_mismatch",
            CliError::Core(changerisk::Error::Config(_)) => "invalid_config",
            CliError::Core(_) => "pipeline",
            CliError::Service(_) => "service",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "missing_input" => 3,
            "fingerprint_mismatch" => 4,
            "output_locked" => 5,
            "invalid_option" | "invalid_config" => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
