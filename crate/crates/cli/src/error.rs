use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(kesten_core::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} acceptance criteria failed")]
    Acceptance { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Acceptance { .. } => 4,
        }
    }
}

impl From<kesten_core::Error> for CliError {
    fn from(e: kesten_core::Error) -> Self {
        use kesten_core::Error as E;
        match e {
            E::InvalidModel(_) | E::InvalidArgument(_) | E::DimensionMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other),
        }
    }
}
