use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty context set")]
    EmptyContext,

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("non-finite loss at episode {episode} (parameter norm {param_norm})")]
    NonFinite { episode: usize, param_norm: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::EmptyContext => "empty-context",
            Error::UnknownWord(_) => "lookup",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Spec(_) => "spec",
            Error::Sampling(_) => "sampling",
            Error::Integrity(_) => "integrity",
            Error::NonFinite { .. } => "non-finite",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
