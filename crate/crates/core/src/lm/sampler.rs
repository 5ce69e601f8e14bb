use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::TailDistribution;
use crate::error::{Error, Result};
use crate::lattice::TokenId;
use crate::rng;

/// Top-k sampling with temperature and repetition penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub k: usize,
    pub temperature: f64,
    pub repetition_penalty: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 50,
            temperature: 0.7,
            repetition_penalty: 1.05,
        }
    }
}

impl SamplerConfig {
    /// Noise-token sampling: top-`k`, temperature 1, no penalty.
    pub fn noise(k: usize) -> Self {
        SamplerConfig {
            k,
            temperature: 1.0,
            repetition_penalty: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("sampler k must be at least 1".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.repetition_penalty >= 1.0) {
            return Err(Error::Config("repetition penalty must be >= 1".into()));
        }
        Ok(())
    }
}

/// Scores after the repetition penalty and temperature, in `dist` order.
///
/// The score of a token is its log-probability. Tokens already in `history`
/// have positive scores divided by the penalty and negative scores multiplied
/// by it.
pub fn adjusted_scores(dist: &TailDistribution, cfg: &SamplerConfig, history: &[TokenId]) -> Vec<f64> {
    dist.entries
        .iter()
        .map(|&(token, lp)| {
            let mut score = lp;
            if cfg.repetition_penalty != 1.0 && history.contains(&token) {
                score = if score > 0.0 {
                    score / cfg.repetition_penalty
                } else {
                    score * cfg.repetition_penalty
                };
            }
            score / cfg.temperature
        })
        .collect()
}

/// Draw one token. Consumes exactly one value from `rng`.
///
/// `dist` must be non-empty.
pub fn sample<R: RngCore + ?Sized>(
    dist: &TailDistribution,
    cfg: &SamplerConfig,
    history: &[TokenId],
    rng: &mut R,
) -> TokenId {
    assert!(!dist.is_empty(), "cannot sample from an empty distribution");
    let scores = adjusted_scores(dist, cfg, history);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(dist.entries[a].0.cmp(&dist.entries[b].0))
    });
    order.truncate(cfg.k.max(1));
    let best = scores[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| (scores[i] - best).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng::unit(rng) * total;
    for (&i, &w) in order.iter().zip(&weights) {
        if u < w {
            return dist.entries[i].0;
        }
        u -= w;
    }
    dist.entries[*order.last().unwrap()].0
}
