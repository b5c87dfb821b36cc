use std::path::PathBuf;

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: did not converge: {detail}")]
    NonConvergence { context: String, detail: String },
    #[error("{context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: fockforge_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 when a fit or
    /// reconstruction fails to converge, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::NonConvergence { .. } => 3,
            RunError::Numerical { source: fockforge_core::Error::FitFailed { .. }, .. } => 3,
            RunError::Numerical { source: fockforge_core::Error::InvalidParameter(_), .. } => 2,
            RunError::Numerical { .. } | RunError::Io { .. } => 1,
        }
    }
}

/// Attaches experiment context to core errors.
pub trait Context<T> {
    fn context(self, what: &str) -> Result<T, RunError>;
}

impl<T> Context<T> for fockforge_core::Result<T> {
    fn context(self, what: &str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Numerical { context: what.to_string(), source })
    }
}
