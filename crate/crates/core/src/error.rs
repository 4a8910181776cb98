use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("capacity exceeded: view {view} has {masks} masks but only {tokens} tokens are available")]
    Capacity {
        view: usize,
        masks: usize,
        tokens: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("scene placement failed for seed {seed} after {attempts} attempts")]
    Placement { seed: u64, attempts: usize },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation errors are caller mistakes (bad input, bad config); the rest
    /// are runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::Invalid(_)
                | Error::Capacity { .. }
                | Error::Format { .. }
                | Error::Io { .. }
        )
    }
}
