//! Client-side noise token generation.
//!
//! Every scheme returns `N - 1` tokens that are pairwise distinct and distinct
//! from the true token. A candidate that collides is redrawn up to
//! [`MAX_RESAMPLE`] times; after that a token is drawn uniformly from the
//! vocabulary entries not yet used in the column.

use std::collections::HashMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProtocolErrorCode, Result};
use crate::lattice::{GGramTail, TokenId};
use crate::lm::{sample, PpmiEmbeddings, SamplerConfig, TailDistribution};
use crate::rng;

pub const MAX_RESAMPLE: usize = 16;
pub const SYNONYM_SKIP: usize = 10;
pub const SYNONYM_TAKE: usize = 5;
pub const NOISE_K: usize = 5;

/// Tail-keyed access to the distributions of the current step.
pub trait DistLookup {
    fn lookup(&self, tail: &GGramTail) -> Option<&TailDistribution>;
}

impl DistLookup for HashMap<GGramTail, TailDistribution> {
    fn lookup(&self, tail: &GGramTail) -> Option<&TailDistribution> {
        self.get(tail)
    }
}

impl DistLookup for [TailDistribution] {
    fn lookup(&self, tail: &GGramTail) -> Option<&TailDistribution> {
        self.iter().find(|d| &d.tail == tail)
    }
}

/// Mixing-scheme parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingConfig {
    pub mix_ratio: f64,
    /// Ratio used while the client is emitting prompt tokens.
    #[serde(default)]
    pub prompt_mix_ratio: Option<f64>,
    pub noise_k: usize,
}

impl MixingConfig {
    pub fn new(mix_ratio: f64) -> Self {
        MixingConfig {
            mix_ratio,
            prompt_mix_ratio: None,
            noise_k: NOISE_K,
        }
    }

    pub fn ratio(&self, in_prompt: bool) -> f64 {
        match (in_prompt, self.prompt_mix_ratio) {
            (true, Some(r)) => r,
            _ => self.mix_ratio,
        }
    }
}

/// A noise scheme, selected by name in session configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum NoiseScheme {
    Synonym {
        #[serde(default = "default_skip")]
        skip: usize,
        #[serde(default = "default_take")]
        take: usize,
    },
    Parallel {
        #[serde(default = "default_noise_k")]
        noise_k: usize,
    },
    Mixing(MixingConfig),
}

fn default_skip() -> usize {
    SYNONYM_SKIP
}
fn default_take() -> usize {
    SYNONYM_TAKE
}
fn default_noise_k() -> usize {
    NOISE_K
}

impl NoiseScheme {
    pub fn synonym() -> Self {
        NoiseScheme::Synonym {
            skip: SYNONYM_SKIP,
            take: SYNONYM_TAKE,
        }
    }

    pub fn parallel() -> Self {
        NoiseScheme::Parallel { noise_k: NOISE_K }
    }

    pub fn mixing(mix_ratio: f64) -> Self {
        NoiseScheme::Mixing(MixingConfig::new(mix_ratio))
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseScheme::Synonym { .. } => "synonym",
            NoiseScheme::Parallel { .. } => "parallel",
            NoiseScheme::Mixing(_) => "mixing",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseScheme::Synonym { take: 0, .. } => {
                Err(Error::Config("synonym take must be at least 1".into()))
            }
            NoiseScheme::Parallel { noise_k: 0 } => {
                Err(Error::Config("noise_k must be at least 1".into()))
            }
            NoiseScheme::Mixing(cfg) => {
                let ratios = [Some(cfg.mix_ratio), cfg.prompt_mix_ratio];
                if ratios.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
                    return Err(Error::Config("mix ratio must lie in [0, 1]".into()));
                }
                if cfg.noise_k == 0 {
                    return Err(Error::Config("noise_k must be at least 1".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        matches!(self, NoiseScheme::Synonym { .. })
    }

    pub fn make_noise<R: RngCore + ?Sized>(
        &self,
        ctx: &StepContext<'_>,
        rng: &mut R,
    ) -> Result<NoiseDraw> {
        match *self {
            NoiseScheme::Synonym { skip, take } => synonym_noise(ctx, skip, take, rng),
            NoiseScheme::Parallel { noise_k } => parallel_noise(ctx, noise_k, rng),
            NoiseScheme::Mixing(cfg) => mixing_noise(ctx, &cfg, rng),
        }
    }
}

/// Everything a scheme may read while producing one step's noise.
pub struct StepContext<'a> {
    pub true_token: TokenId,
    pub true_tail: &'a GGramTail,
    /// One tail per noise sequence; its length fixes the number of noise tokens.
    pub noise_tails: &'a [GGramTail],
    pub dists: &'a dyn DistLookup,
    pub embeddings: Option<&'a PpmiEmbeddings>,
    pub vocab_size: usize,
    pub in_prompt: bool,
}

/// Output of one scheme invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NoiseDraw {
    pub tokens: Vec<TokenId>,
    /// Per noise sequence: whether it drew from the true tail's distribution.
    pub branched: Vec<bool>,
    /// Tokens that came from the uniform fallback rather than the scheme.
    pub fallbacks: usize,
}

/// Try `draw` up to [`MAX_RESAMPLE`] times for a token outside `taken`, then
/// fall back to a uniformly random unused token.
fn pick_distinct<R, F>(taken: &[TokenId], vocab_size: usize, rng: &mut R, mut draw: F) -> (TokenId, bool)
where
    R: RngCore + ?Sized,
    F: FnMut(&mut R) -> Option<TokenId>,
{
    for _ in 0..MAX_RESAMPLE {
        match draw(rng) {
            Some(token) if !taken.contains(&token) => return (token, false),
            Some(_) => continue,
            None => break,
        }
    }
    (uniform_unused(taken, vocab_size, rng), true)
}

fn uniform_unused<R: RngCore + ?Sized>(taken: &[TokenId], vocab_size: usize, rng: &mut R) -> TokenId {
    let mut sorted: Vec<TokenId> = taken.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let free = vocab_size - sorted.iter().filter(|&&t| (t as usize) < vocab_size).count();
    let mut token = rng::below(rng, free) as TokenId;
    for &t in &sorted {
        if t <= token {
            token += 1;
        }
    }
    token
}

fn missing(tail: &GGramTail) -> Error {
    Error::protocol(
        ProtocolErrorCode::MissingDistribution,
        format!("no distribution for tail {:?}", tail.tokens()),
    )
}

/// Each noise token is drawn uniformly from the `take` nearest neighbours of
/// the true token after skipping the closest `skip`.
pub fn synonym_noise<R: RngCore + ?Sized>(
    ctx: &StepContext<'_>,
    skip: usize,
    take: usize,
    rng: &mut R,
) -> Result<NoiseDraw> {
    let count = ctx.noise_tails.len();
    let candidates = ctx
        .embeddings
        .ok_or_else(|| Error::Config("synonym scheme needs embeddings".into()))?
        .nearest_tokens(ctx.true_token, skip, take)
        .filter(|c| !c.is_empty());
    let mut taken = vec![ctx.true_token];
    let mut draw = NoiseDraw {
        branched: vec![false; count],
        ..Default::default()
    };
    for _ in 0..count {
        let (token, fell_back) = pick_distinct(&taken, ctx.vocab_size, rng, |r| {
            candidates
                .as_ref()
                .map(|c| c[rng::below(r, c.len())])
        });
        draw.fallbacks += fell_back as usize;
        taken.push(token);
        draw.tokens.push(token);
    }
    Ok(draw)
}

/// Noise sequence `i` extends itself from the distribution keyed by its own tail.
pub fn parallel_noise<R: RngCore + ?Sized>(
    ctx: &StepContext<'_>,
    noise_k: usize,
    rng: &mut R,
) -> Result<NoiseDraw> {
    mixing_noise(
        ctx,
        &MixingConfig {
            mix_ratio: 0.0,
            prompt_mix_ratio: None,
            noise_k,
        },
        rng,
    )
}

/// Like [`parallel_noise`], except that each noise sequence independently
/// branches with probability `mix_ratio` and draws from the true tail's
/// distribution instead.
pub fn mixing_noise<R: RngCore + ?Sized>(
    ctx: &StepContext<'_>,
    cfg: &MixingConfig,
    rng: &mut R,
) -> Result<NoiseDraw> {
    let ratio = cfg.ratio(ctx.in_prompt);
    let sampler = SamplerConfig::noise(cfg.noise_k);
    let mut taken = vec![ctx.true_token];
    let mut draw = NoiseDraw::default();
    for tail in ctx.noise_tails {
        let branch = ratio > 0.0 && rng::unit(rng) < ratio;
        let source = if branch { ctx.true_tail } else { tail };
        let dist = ctx.dists.lookup(source).ok_or_else(|| missing(source))?;
        let (token, fell_back) = pick_distinct(&taken, ctx.vocab_size, rng, |r| {
            (!dist.is_empty()).then(|| sample(dist, &sampler, &[], r))
        });
        draw.fallbacks += fell_back as usize;
        draw.branched.push(branch);
        taken.push(token);
        draw.tokens.push(token);
    }
    Ok(draw)
}
