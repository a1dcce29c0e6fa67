use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported parameter: {0}")]
    UnsupportedParameter(String),

    #[error("configuration is not logical: chain {chain} is broken")]
    NotLogical { chain: usize },

    #[error("{qubits} qubits exceeds the dense-oracle cap of {cap}")]
    SizeLimit { qubits: usize, cap: usize },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("Binder cumulant undefined: second moment is zero")]
    UndefinedCumulant,

    #[error("invalid collapse window: {0}")]
    InvalidWindow(String),

    #[error("misaligned inputs: {0}")]
    Alignment(String),

    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
