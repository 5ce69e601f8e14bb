use std::collections::HashMap;

use rand_xoshiro::SplitMix64;

use super::wire::{decode_items, WireMessage, WireDist};
use super::SessionConfig;
use crate::error::{Error, ProtocolErrorCode, Result};
use crate::lattice::{enumerate_tails, permute_column, ClientSecret, GGramTail, Lattice, TokenId};
use crate::lm::{sample, PpmiEmbeddings, TailDistribution};
use crate::noise::StepContext;

/// Counters describing how noise was produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub branches: usize,
    pub noise_tokens: usize,
    pub fallbacks: usize,
}

/// What the client ends a session with.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub lattice: Lattice,
    /// Prompt followed by generated tokens, one per column.
    pub true_seq: Vec<TokenId>,
    pub prompt_len: usize,
    pub secret: ClientSecret,
    pub stats: ClientStats,
}

impl ClientOutcome {
    pub fn generation(&self) -> &[TokenId] {
        &self.true_seq[self.prompt_len..]
    }
}

/// Client state: the shared lattice plus everything private to the client.
pub struct ClientSession<'a> {
    config: SessionConfig,
    embeddings: Option<&'a PpmiEmbeddings>,
    vocab_size: usize,
    vocab_hash: String,
    lattice: Lattice,
    secret: ClientSecret,
    true_seq: Vec<TokenId>,
    noise_tails: Vec<GGramTail>,
    ended: bool,
    sample_rng: SplitMix64,
    noise_rng: SplitMix64,
    stats: ClientStats,
}

impl<'a> ClientSession<'a> {
    pub fn new(
        config: SessionConfig,
        secret: ClientSecret,
        vocab_size: usize,
        vocab_hash: impl Into<String>,
        embeddings: Option<&'a PpmiEmbeddings>,
        sample_rng: SplitMix64,
        noise_rng: SplitMix64,
    ) -> Result<Self> {
        config.validate_structure()?;
        if config.scheme.needs_embeddings() && embeddings.is_none() {
            return Err(Error::Config(format!("{} scheme needs embeddings", config.scheme.name())));
        }
        if let Some(&bad) = config.prompt.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::UnknownToken {
                token: bad,
                vocab_size,
            });
        }
        let lattice = Lattice::new(config.n)?;
        let noise_tails = vec![GGramTail::bos(config.g, config.bos); config.n - 1];
        Ok(ClientSession {
            config,
            embeddings,
            vocab_size,
            vocab_hash: vocab_hash.into(),
            lattice,
            secret,
            true_seq: Vec::new(),
            noise_tails,
            ended: false,
            sample_rng,
            noise_rng,
            stats: ClientStats::default(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn true_seq(&self) -> &[TokenId] {
        &self.true_seq
    }

    pub fn is_complete(&self) -> bool {
        self.lattice.len() == self.config.steps()
    }

    pub fn hello(&self) -> WireMessage {
        WireMessage::Hello {
            n: self.config.n,
            g: self.config.g,
            k: self.config.k,
            vocab_hash: self.vocab_hash.clone(),
        }
    }

    /// The initial all-bos column.
    pub fn start(&self) -> WireMessage {
        WireMessage::Tokens {
            t: 0,
            ids: vec![self.config.bos; self.config.n],
        }
    }

    /// Decode and check a `Dists` message for step `t`.
    fn accept_dists(&self, t: u64, items: &[WireDist]) -> Result<Vec<TailDistribution>> {
        let expected_t = self.lattice.len() as u64 + 1;
        if t != expected_t {
            return Err(Error::protocol(
                ProtocolErrorCode::OutOfOrder,
                format!("expected dists for t={expected_t}, got t={t}"),
            ));
        }
        let dists = decode_items(items)?;
        let tails = enumerate_tails(&self.lattice, self.config.g, self.config.bos);
        if dists.len() != tails.len() {
            return Err(Error::protocol(
                ProtocolErrorCode::MissingDistribution,
                format!("{} distributions, expected {}", dists.len(), tails.len()),
            ));
        }
        for (d, tail) in dists.iter().zip(&tails) {
            if &d.tail != tail {
                return Err(Error::protocol(
                    ProtocolErrorCode::Malformed,
                    format!("distribution for {:?} out of order", d.tail.tokens()),
                ));
            }
            d.validate(self.config.k, self.vocab_size)
                .map_err(|e| Error::protocol(ProtocolErrorCode::Malformed, e))?;
        }
        Ok(dists)
    }

    /// Consume the server's distributions for column `t` and produce the
    /// permuted column.
    pub fn client_step(&mut self, msg: WireMessage) -> Result<WireMessage> {
        let (t, items) = match msg {
            WireMessage::Dists { t, items } => (t, items),
            WireMessage::Error { code, detail } => {
                return Err(Error::protocol(code, format!("server aborted: {detail}")))
            }
            other => {
                return Err(Error::protocol(
                    ProtocolErrorCode::Unexpected,
                    format!("expected dists, got {}", other.kind()),
                ))
            }
        };
        let dists = self.accept_dists(t, &items)?;
        let table: HashMap<GGramTail, TailDistribution> = dists
            .into_iter()
            .map(|d| (d.tail.clone(), d))
            .collect();

        let true_tail = GGramTail::of_history(&self.true_seq, self.config.g, self.config.bos);
        let step = t as usize;
        let prompt_len = self.config.prompt.len();
        let true_token = if step <= prompt_len {
            self.config.prompt[step - 1]
        } else if self.ended {
            self.config.eos.expect("ended implies an eos token")
        } else {
            let dist = table.get(&true_tail).filter(|d| !d.is_empty()).ok_or_else(|| {
                Error::protocol(
                    ProtocolErrorCode::MissingDistribution,
                    "no distribution for the true tail",
                )
            })?;
            let token = sample(dist, &self.config.sampler, &self.true_seq, &mut self.sample_rng);
            if Some(token) == self.config.eos {
                self.ended = true;
            }
            token
        };

        let ctx = StepContext {
            true_token,
            true_tail: &true_tail,
            noise_tails: &self.noise_tails,
            dists: &table,
            embeddings: self.embeddings,
            vocab_size: self.vocab_size,
            in_prompt: step <= prompt_len,
        };
        let noise = self.config.scheme.make_noise(&ctx, &mut self.noise_rng)?;
        self.stats.branches += noise.branched.iter().filter(|&&b| b).count();
        self.stats.noise_tokens += noise.tokens.len();
        self.stats.fallbacks += noise.fallbacks;

        let mut column = Vec::with_capacity(self.config.n);
        column.push(true_token);
        column.extend_from_slice(&noise.tokens);
        let permuted = permute_column(&column, self.secret.prime(), t)?;
        self.lattice.push_column(permuted.tokens.clone())?;
        self.secret.record(permuted.index_map[0]);
        self.true_seq.push(true_token);
        for (tail, &token) in self.noise_tails.iter_mut().zip(&noise.tokens) {
            *tail = tail.advance(token);
        }
        Ok(WireMessage::Tokens {
            t,
            ids: permuted.tokens,
        })
    }

    pub fn finish(self) -> ClientOutcome {
        ClientOutcome {
            lattice: self.lattice,
            true_seq: self.true_seq,
            prompt_len: self.config.prompt.len(),
            secret: self.secret,
            stats: self.stats,
        }
    }
}
