use std::path::PathBuf;

/// Failures of the command line and the studies, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum ExoedError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] exoed_core::Error),
}

impl ExoedError {
    /// 2 for configuration and input problems, 3 for solver failures and 4
    /// for failed global verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExoedError::Config(_) | ExoedError::Io { .. } | ExoedError::Parse { .. } => 2,
            ExoedError::Core(
                exoed_core::Error::InvalidArgument(_)
                | exoed_core::Error::Domain(_)
                | exoed_core::Error::DimensionMismatch { .. },
            ) => 2,
            ExoedError::Core(e) if e.is_verification() => 4,
            ExoedError::Core(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExoedError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        ExoedError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = ExoedError> = std::result::Result<T, E>;
