use thiserror::Error;

/// Failures talking to the continuator endpoint.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CloudError {
    #[error("transport error: {message}")]
    Transport { message: String, partial: String },
    #[error("continuation timed out after {timeout_ms} ms")]
    Timeout { timeout_ms: u64, partial: String },
    #[error("endpoint returned status {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("malformed stream frame: {0}")]
    Malformed(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

impl CloudError {
    /// Text delivered before the failure.
    pub fn partial(&self) -> &str {
        match self {
            Self::Transport { partial, .. } | Self::Timeout { partial, .. } => partial,
            _ => "",
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, Self::Transport { .. })
    }
}
