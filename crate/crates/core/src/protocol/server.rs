use std::collections::HashMap;
use std::sync::Arc;

use super::wire::WireMessage;
use crate::error::{Error, ProtocolErrorCode, Result};
use crate::lattice::{check_column, enumerate_tails, GGramTail, Lattice, TokenId};
use crate::lm::{LmBackend, TailDistribution, DEFAULT_WIRE_K};
use crate::transcript::TranscriptRecord;

/// Server-side settings shared by all sessions.
#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Upper bound on the K a client may request.
    pub max_k: usize,
    /// Expected vocabulary hash; `None` accepts any.
    pub vocab_hash: Option<String>,
    pub bos: TokenId,
    /// Save untruncated distributions in the transcript (the wire still
    /// carries top-K).
    pub record_full: bool,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            max_k: DEFAULT_WIRE_K,
            vocab_hash: None,
            bos: crate::vocab::BOS_ID,
            record_full: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitHello,
    Active,
    Finished,
    Aborted,
}

/// State of one server conversation.
pub struct ServerSession {
    backend: Arc<dyn LmBackend>,
    options: ServerOptions,
    phase: Phase,
    n: usize,
    g: usize,
    k: usize,
    next_t: u64,
    lattice: Lattice,
    saved_dists: Vec<Vec<TailDistribution>>,
}

impl ServerSession {
    pub fn new(backend: Arc<dyn LmBackend>, options: ServerOptions) -> Self {
        ServerSession {
            backend,
            options,
            phase: Phase::AwaitHello,
            n: 1,
            g: 1,
            k: DEFAULT_WIRE_K,
            next_t: 0,
            lattice: Lattice::new(1).expect("width 1 is valid"),
            saved_dists: Vec::new(),
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.phase, Phase::Finished | Phase::Aborted)
    }

    /// Everything observed so far. Marked incomplete unless the client sent
    /// `Done`.
    pub fn transcript(&self) -> TranscriptRecord {
        let complete = self.phase == Phase::Finished;
        let mut saved_dists = self.saved_dists.clone();
        if complete {
            saved_dists.truncate(self.lattice.len());
        }
        TranscriptRecord {
            n: self.n,
            g: self.g,
            k: self.k,
            bos: self.options.bos,
            vocab_size: self.backend.vocab_size(),
            full_vectors: self.options.record_full,
            complete,
            lattice: self.lattice.clone(),
            saved_dists,
        }
    }

    /// Handle one client message. Returns the reply; after an `Error` reply
    /// the session is closed.
    pub fn handle(&mut self, msg: WireMessage) -> WireMessage {
        match self.dispatch(msg) {
            Ok(reply) => reply,
            Err(err) => {
                self.phase = Phase::Aborted;
                match err {
                    Error::Protocol { code, detail } => WireMessage::error(code, detail),
                    other => WireMessage::error(ProtocolErrorCode::Unexpected, other.to_string()),
                }
            }
        }
    }

    fn dispatch(&mut self, msg: WireMessage) -> Result<WireMessage> {
        match (self.phase, msg) {
            (Phase::AwaitHello, WireMessage::Hello { n, g, k, vocab_hash }) => {
                self.hello(n, g, k, vocab_hash)
            }
            (Phase::Active, WireMessage::Tokens { t, ids }) => {
                let items = self.server_step(t, ids)?;
                Ok(WireMessage::dists(t + 1, &items))
            }
            (Phase::Active, WireMessage::Done { t }) => {
                if t != self.lattice.len() as u64 || self.next_t != t + 1 {
                    return Err(Error::protocol(
                        ProtocolErrorCode::OutOfOrder,
                        format!("done at t={t}, lattice has {} columns", self.lattice.len()),
                    ));
                }
                self.phase = Phase::Finished;
                Ok(WireMessage::Done { t })
            }
            (_, WireMessage::Error { code, detail }) => {
                Err(Error::protocol(code, format!("client aborted: {detail}")))
            }
            (phase, msg) => Err(Error::protocol(
                ProtocolErrorCode::Unexpected,
                format!("{} message in phase {phase:?}", msg.kind()),
            )),
        }
    }

    fn hello(&mut self, n: usize, g: usize, k: usize, vocab_hash: String) -> Result<WireMessage> {
        if n == 0 {
            return Err(Error::protocol(ProtocolErrorCode::BadWidth, "width must be positive"));
        }
        if g != self.backend.tail_len() {
            return Err(Error::protocol(
                ProtocolErrorCode::Unexpected,
                format!("backend conditions on {} tokens, client asked for {g}", self.backend.tail_len()),
            ));
        }
        if k == 0 || k > self.options.max_k {
            return Err(Error::protocol(
                ProtocolErrorCode::Unexpected,
                format!("k={k} outside 1..={}", self.options.max_k),
            ));
        }
        if let Some(expected) = &self.options.vocab_hash {
            if expected != &vocab_hash {
                return Err(Error::protocol(
                    ProtocolErrorCode::VocabMismatch,
                    format!("server vocabulary {expected}, client {vocab_hash}"),
                ));
            }
        }
        self.n = n;
        self.g = g;
        self.k = k;
        self.lattice = Lattice::new(n)?;
        self.phase = Phase::Active;
        Ok(WireMessage::Hello { n, g, k, vocab_hash })
    }

    /// Extend the lattice with column `t` and compute the distributions for
    /// every tail, in canonical order.
    pub fn server_step(&mut self, t: u64, ids: Vec<TokenId>) -> Result<Vec<TailDistribution>> {
        if t != self.next_t {
            return Err(Error::protocol(
                ProtocolErrorCode::OutOfOrder,
                format!("expected t={}, got t={t}", self.next_t),
            ));
        }
        if ids.len() != self.n {
            return Err(Error::protocol(
                ProtocolErrorCode::BadWidth,
                format!("{} ids for width {}", ids.len(), self.n),
            ));
        }
        let vocab_size = self.backend.vocab_size();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::protocol(
                ProtocolErrorCode::UnknownToken,
                format!("token {bad} outside vocabulary of {vocab_size}"),
            ));
        }
        if t == 0 {
            if ids.iter().any(|&id| id != self.options.bos) {
                return Err(Error::protocol(
                    ProtocolErrorCode::Unexpected,
                    "first column must be bos",
                ));
            }
        } else {
            check_column(&ids, self.n).map_err(|e| {
                Error::protocol(ProtocolErrorCode::DuplicateIds, e.to_string())
            })?;
            self.lattice.push_column(ids)?;
        }
        self.next_t += 1;

        let tails = enumerate_tails(&self.lattice, self.g, self.options.bos);
        let wire_k = self.k;
        let saved_k = if self.options.record_full { vocab_size } else { wire_k };
        let mut cache: HashMap<&GGramTail, TailDistribution> = HashMap::new();
        let mut saved = Vec::with_capacity(tails.len());
        for tail in &tails {
            let d = match cache.get(tail) {
                Some(d) => d.clone(),
                None => {
                    let d = self.backend.next_dist(&self.lattice, tail, saved_k)?;
                    cache.insert(tail, d.clone());
                    d
                }
            };
            saved.push(d);
        }
        let sent = saved
            .iter()
            .map(|d| TailDistribution {
                tail: d.tail.clone(),
                entries: d.top(wire_k).to_vec(),
            })
            .collect();
        self.saved_dists.push(saved);
        Ok(sent)
    }
}
