use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("factor names overlap: {0}")]
    OverlappingFactors(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operator is not unitary (max |U†U - I| = {0:e})")]
    NotUnitary(f64),

    #[error("operator is not hermitian (max |H - H†| = {0:e})")]
    NotHermitian(f64),

    #[error("state is not normalized (norm² = {0})")]
    Unnormalized(f64),

    #[error("non-finite amplitude at basis index {0}")]
    NonFinite(usize),

    #[error("unknown factor `{0}`")]
    UnknownFactor(String),

    #[error("unknown symbol `{symbol}` for factor `{factor}`")]
    UnknownSymbol { factor: String, symbol: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
