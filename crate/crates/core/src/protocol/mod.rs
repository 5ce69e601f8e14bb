//! Client and server state machines and the transports that connect them.
//!
//! A session runs as a strict request/response conversation:
//!
//! ```text
//! client                                  server
//!   Hello{n,g,k,vocab_hash}        ->
//!                                  <-     Hello (echo)
//!   Tokens{t=0, n x bos}           ->
//!                                  <-     Dists{t=1, n^g items}
//!   Tokens{t=1, permuted column}   ->
//!                                  <-     Dists{t=2, ...}
//!   ...
//!   Tokens{t=T}                    ->
//!                                  <-     Dists{t=T+1}   (unused)
//!   Done{t=T}                      ->
//!                                  <-     Done{t=T}
//! ```
//!
//! Any violation makes the receiving side reply with `Error` and abort.

mod client;
mod server;
mod session;
mod transport;
pub mod wire;

pub use client::{ClientOutcome, ClientSession, ClientStats};
pub use server::{ServerOptions, ServerSession};
pub use session::{
    generate_plain, run_in_process, run_over_tcp, run_session, serve_tcp, spawn_tcp_server, ClientSeeds,
};
pub use transport::{CapturingTransport, InProcessTransport, TcpTransport, Transport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TokenId;
use crate::lm::{SamplerConfig, DEFAULT_WIRE_K};
use crate::noise::NoiseScheme;
use crate::vocab::{BOS_ID, EOS_ID};

/// Client-side configuration of one generation session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Lattice width.
    pub n: usize,
    /// Tail length the server conditions on.
    pub g: usize,
    /// Generated tokens after the prompt; the session has
    /// `prompt.len() + t_max` columns.
    pub t_max: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub scheme: NoiseScheme,
    #[serde(default)]
    pub prompt: Vec<TokenId>,
    /// Entries per distribution on the wire.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_bos")]
    pub bos: TokenId,
    /// Once sampled, the true sequence is padded with this token.
    #[serde(default = "default_eos")]
    pub eos: Option<TokenId>,
}

fn default_k() -> usize {
    DEFAULT_WIRE_K
}
fn default_bos() -> TokenId {
    BOS_ID
}
fn default_eos() -> Option<TokenId> {
    Some(EOS_ID)
}

impl SessionConfig {
    pub fn new(n: usize, g: usize, t_max: usize, scheme: NoiseScheme) -> Self {
        SessionConfig {
            n,
            g,
            t_max,
            sampler: SamplerConfig::default(),
            scheme,
            prompt: Vec::new(),
            k: DEFAULT_WIRE_K,
            bos: BOS_ID,
            eos: Some(EOS_ID),
        }
    }

    /// Total number of lattice columns.
    pub fn steps(&self) -> usize {
        self.prompt.len() + self.t_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("lattice width must be at least 2".into()));
        }
        self.validate_structure()
    }

    /// Every check except the minimum width, so single-width lattices can be
    /// run as a degenerate baseline.
    pub fn validate_structure(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("lattice width must be at least 1".into()));
        }
        if self.g == 0 {
            return Err(Error::Config("tail length must be at least 1".into()));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("wire k must be at least 1".into()));
        }
        self.sampler.validate()?;
        self.scheme.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        let cfg = SessionConfig::new(2, 1, 60, NoiseScheme::parallel());
        assert!(cfg.validate().is_ok());
        assert!(SessionConfig { n: 1, ..cfg.clone() }.validate().is_err());
        assert!(SessionConfig { n: 1, ..cfg.clone() }.validate_structure().is_ok());
        assert!(SessionConfig { g: 0, ..cfg.clone() }.validate().is_err());
        assert!(SessionConfig { t_max: 0, ..cfg.clone() }.validate().is_err());
        let with_prompt = SessionConfig {
            prompt: vec![5, 6, 7],
            ..cfg
        };
        assert_eq!(with_prompt.steps(), 63);
    }

    #[test]
    fn config_from_json_uses_defaults() {
        let cfg: SessionConfig =
            serde_json::from_str(r#"{"n":3,"g":2,"t_max":10,"scheme":{"name":"synonym"}}"#).unwrap();
        assert_eq!(cfg.k, 50);
        assert_eq!(cfg.sampler, SamplerConfig::default());
        assert_eq!(cfg.scheme, NoiseScheme::synonym());
    }
}
