use thiserror::Error;

use crate::lattice::TokenId;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column has {got} entries, lattice width is {expected}")]
    ColumnWidth { expected: usize, got: usize },

    #[error("duplicate token {0} in column")]
    DuplicateToken(TokenId),

    #[error("token {token} outside vocabulary of size {vocab_size}")]
    UnknownToken { token: TokenId, vocab_size: usize },

    #[error("tail has {got} tokens, expected {expected}")]
    TailLength { expected: usize, got: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol error ({code}): {detail}")]
    Protocol { code: ProtocolErrorCode, detail: String },

    #[error("malformed transcript: {0}")]
    Transcript(String),

    #[error("state space too large: {0}")]
    StateSpace(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty hypothesis set")]
    NoHypotheses,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Machine-readable protocol failure codes, carried in `Error` wire messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolErrorCode {
    OutOfOrder,
    DuplicateIds,
    UnknownToken,
    BadWidth,
    VocabMismatch,
    Unexpected,
    MissingDistribution,
    Transport,
    Malformed,
}

impl std::fmt::Display for ProtocolErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::OutOfOrder => "out_of_order",
            Self::DuplicateIds => "duplicate_ids",
            Self::UnknownToken => "unknown_token",
            Self::BadWidth => "bad_width",
            Self::VocabMismatch => "vocab_mismatch",
            Self::Unexpected => "unexpected",
            Self::MissingDistribution => "missing_distribution",
            Self::Transport => "transport",
            Self::Malformed => "malformed",
        };
        f.write_str(s)
    }
}

impl Error {
    pub fn protocol(code: ProtocolErrorCode, detail: impl Into<String>) -> Self {
        Error::Protocol {
            code,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
