use thiserror::Error;

/// Errors produced by the data, engine and metric layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("IDX format error: {0}")]
    Format(String),

    #[error("IDX length error: expected {expected} payload bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    #[error("instrumentation error: {0}")]
    Instrumentation(String),

    #[error("entropy is undefined for an empty histogram")]
    UndefinedEntropy,

    #[error("argument error: {0}")]
    Argument(String),

    #[error("layer {layer} has {width} neurons, above the state-space cap of {cap}")]
    UnsupportedWidth { layer: usize, width: usize, cap: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
