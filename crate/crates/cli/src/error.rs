use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("{0} check(s) failed")]
    Verify(usize),

    #[error(transparent)]
    Core(#[from] ptnas::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for usage and input problems, 3 for numeric failures, 2 for every
    /// other broken invariant.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Read { .. } => 1,
            CliError::Core(
                ptnas::Error::NonFiniteLoss { .. } | ptnas::Error::NonFinite { .. } | ptnas::Error::Degenerate(_),
            ) => 3,
            _ => 2,
        }
    }
}
