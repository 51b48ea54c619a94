use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value or shape contract was violated before any work ran.
    #[error("config: {0}")]
    Config(String),

    /// An operation was invoked in a way its contract forbids (stale cache, wrong order, ...).
    #[error("usage: {0}")]
    Usage(String),

    /// Training diverged or otherwise failed.
    #[error("training failed at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    /// An artifact this stage depends on is missing from disk.
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    /// A persisted file failed to parse or verify.
    #[error("load {path}: {detail}")]
    Load { path: PathBuf, detail: String },

    #[error("io {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable class name, used by the CLI for exit codes
    /// and one-line error reporting.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Training { .. } => "training",
            Error::MissingArtifact(_) => "missing-artifact",
            Error::Load { .. } => "load",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
