use thiserror::Error;

/// Everything the harness can fail with, mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{field}: {message}")]
    Field {
        field: &'static str,
        message: String,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] steinrl_core::Error),
    #[error("cannot write report: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot write report: {0}")]
    Write(#[from] std::io::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl HarnessError {
    pub fn field(field: &'static str, message: impl Into<String>) -> Self {
        HarnessError::Field {
            field,
            message: message.into(),
        }
    }

    /// 3 for a refused enumeration, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(steinrl_core::Error::Intractable { .. }) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
