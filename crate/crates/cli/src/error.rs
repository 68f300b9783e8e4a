use bdc_core::BdcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    /// A verification gate failed; the payload is a short machine-readable token.
    #[error("FAIL reason={0}")]
    Gate(String),
    #[error("FAIL reason=solver detail={0}")]
    Core(#[from] BdcError),
    #[error("FAIL reason=io detail={0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
