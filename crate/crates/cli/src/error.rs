use stylesearch_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 for configuration and validation failures, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                CoreError::Io { .. } | CoreError::Numerical(_) | CoreError::FitnessOutOfRange { .. } => 1,
                CoreError::InvalidData(_)
                | CoreError::DimensionMismatch { .. }
                | CoreError::InvalidConfig(_)
                | CoreError::IndexOutOfRange { .. }
                | CoreError::ModelFormat { .. } => 2,
            },
        }
    }
}
