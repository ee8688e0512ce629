use std::path::PathBuf;

/// Harness-level failures, split by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad configuration: unknown problem or method, malformed config
    /// file, invalid grids. Exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numeric blowup during a run; partial output has been flushed.
    /// Exit code 3.
    #[error("numeric failure at step {step}: {message}")]
    Numeric { step: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numeric { .. } => 3,
            HarnessError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

impl From<expocol_core::Error> for HarnessError {
    fn from(e: expocol_core::Error) -> Self {
        match e {
            expocol_core::Error::Numeric(m) => HarnessError::Numeric { step: 0, message: m },
            other => HarnessError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
