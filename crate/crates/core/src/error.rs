use thiserror::Error;

use crate::config::ConfigError;
use crate::types::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),

    /// The backend was asked for something its capabilities do not declare.
    #[error("capability error: {0}")]
    Capability(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("out-of-vocabulary words: {}", .0.join(", "))]
    OutOfVocabulary(Vec<String>),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("scripted model: {0}")]
    Script(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("context is empty after tokenization")]
    EmptyContext,

    #[error("embedding of token {0} has zero norm; cosine similarity undefined")]
    ZeroNorm(TokenId),

    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },

    #[error("divergence {0} is outside [0, 1]")]
    Range(f64),

    #[error("no attention value for position {position} (token {token})")]
    MissingPosition { token: TokenId, position: usize },

    #[error("mean relevance {0} is not positive; normalisation would flip or blow up boosts")]
    NegativeMean(f64),

    #[error("{mode} boosting requires {missing}")]
    ModeArgument { mode: String, missing: &'static str },

    #[error("support set mismatch: {0}")]
    SupportMismatch(String),

    #[error("non-finite logit at index {0}")]
    NonFinite(usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    /// Process exit code for this error: 2 for user, config or data problems,
    /// 3 for backend and capability problems, 4 for internal invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capability(_)
            | Error::Script(_)
            | Error::Corpus(_)
            | Error::NonFinite(_)
            | Error::MissingPosition { .. } => 3,
            Error::Invariant(_)
            | Error::SupportMismatch(_)
            | Error::InvalidDistribution(_)
            | Error::Dimension { .. } => 4,
            _ => 2,
        }
    }
}
