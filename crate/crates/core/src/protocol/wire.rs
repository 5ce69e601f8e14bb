//! Newline-delimited JSON messages exchanged by client and server.
//!
//! One message per line. Log-probabilities travel as decimal strings with 9
//! significant digits (`{:.8e}`), so encoded bytes are identical on every
//! platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProtocolErrorCode, Result};
use crate::lattice::{GGramTail, TokenId};
use crate::lm::{format_log_prob, TailDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        n: usize,
        g: usize,
        k: usize,
        vocab_hash: String,
    },
    Tokens {
        t: u64,
        ids: Vec<TokenId>,
    },
    Dists {
        t: u64,
        items: Vec<WireDist>,
    },
    Done {
        t: u64,
    },
    Error {
        code: ProtocolErrorCode,
        detail: String,
    },
}

/// A [`TailDistribution`] in wire form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDist {
    pub tail: Vec<TokenId>,
    pub entries: Vec<(TokenId, String)>,
}

impl From<&TailDistribution> for WireDist {
    fn from(d: &TailDistribution) -> Self {
        WireDist {
            tail: d.tail.tokens().to_vec(),
            entries: d
                .entries
                .iter()
                .map(|&(t, lp)| (t, format_log_prob(lp)))
                .collect(),
        }
    }
}

impl TryFrom<&WireDist> for TailDistribution {
    type Error = Error;

    fn try_from(w: &WireDist) -> Result<Self> {
        let entries = w
            .entries
            .iter()
            .map(|(t, s)| {
                s.parse::<f64>().map(|lp| (*t, lp)).map_err(|_| {
                    Error::protocol(ProtocolErrorCode::Malformed, format!("bad log-prob {s:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TailDistribution {
            tail: GGramTail(w.tail.clone()),
            entries,
        })
    }
}

impl WireMessage {
    pub fn dists(t: u64, items: &[TailDistribution]) -> Self {
        WireMessage::Dists {
            t,
            items: items.iter().map(WireDist::from).collect(),
        }
    }

    pub fn error(code: ProtocolErrorCode, detail: impl Into<String>) -> Self {
        WireMessage::Error {
            code,
            detail: detail.into(),
        }
    }

    /// One JSON object followed by `\n`.
    pub fn encode(&self) -> String {
        let mut line = serde_json::to_string(self).expect("wire messages always serialize");
        line.push('\n');
        line
    }

    pub fn decode(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end_matches(['\n', '\r']))
            .map_err(|e| Error::protocol(ProtocolErrorCode::Malformed, e.to_string()))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "hello",
            WireMessage::Tokens { .. } => "tokens",
            WireMessage::Dists { .. } => "dists",
            WireMessage::Done { .. } => "done",
            WireMessage::Error { .. } => "error",
        }
    }
}

/// Decode a `Dists` payload.
pub fn decode_items(items: &[WireDist]) -> Result<Vec<TailDistribution>> {
    items.iter().map(TailDistribution::try_from).collect()
}
