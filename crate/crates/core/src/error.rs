use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("context overflow: {len} positions exceeds the limit of {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("incomplete timeline: missing {0}")]
    IncompleteTimeline(&'static str),

    #[error("indeterminate value: {0}")]
    Indeterminate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
