use thiserror::Error;

/// Errors raised by the decomposition builders, problems and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BdcError {
    #[error("block index {index} out of range for {n_blocks} blocks")]
    BlockIndex { index: usize, n_blocks: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("partition mismatch between combined problems")]
    PartitionMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inner solver increased the surrogate on block {block}: {start} -> {end}")]
    InnerDivergence { block: usize, start: f64, end: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("backtracking step underflow in inner solver")]
    BacktrackUnderflow,

    #[error("no finite bracket: ell is not subquadratic on the probed range")]
    NotSubquadratic,

    #[error("missing oracle: {0}")]
    MissingOracle(&'static str),
}

pub type Result<T> = std::result::Result<T, BdcError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(BdcError::DimensionMismatch { expected, got })
    }
}
