//! Attack-success and generation-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TokenId;
use crate::lm::{ConditionalModel, PpmiEmbeddings};

/// Fraction of positions where `hyp` matches `truth`.
pub fn true_ratio(hyp: &[TokenId], truth: &[TokenId]) -> Result<f64> {
    if hyp.len() != truth.len() {
        return Err(Error::LengthMismatch(hyp.len(), truth.len()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = hyp.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Largest true-ratio over a set of hypotheses.
pub fn max_true_ratio<H: AsRef<[TokenId]>>(hyps: &[H], truth: &[TokenId]) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::NoHypotheses);
    }
    hyps.iter()
        .map(|h| true_ratio(h.as_ref(), truth))
        .try_fold(f64::NEG_INFINITY, |acc, r| r.map(|r| acc.max(r)))
}

/// Sum of log-probabilities of `text` after `context`.
pub fn log_likelihood<M: ConditionalModel + ?Sized>(model: &M, context: &[TokenId], text: &[TokenId]) -> f64 {
    let mut history = context.to_vec();
    let mut total = 0.0;
    for &token in text {
        total += model.log_prob(&history, token);
        history.push(token);
    }
    total
}

/// Length-normalized pointwise mutual information between a generation `x`
/// and its prompt `y`: `(log P(x | y) - log P(x)) / len(x)`.
pub fn pmi<M: ConditionalModel + ?Sized>(x: &[TokenId], y: &[TokenId], model: &M) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (log_likelihood(model, y, x) - log_likelihood(model, &[], x)) / x.len() as f64
}

/// Similarity of two tokens: 1 for identical ids, cosine otherwise.
fn token_similarity(emb: &PpmiEmbeddings, a: TokenId, b: TokenId) -> f64 {
    if a == b {
        1.0
    } else {
        emb.cosine(a, b)
    }
}

/// Semantic-overlap proxy: for each truth token, the best similarity to any
/// hypothesis token, averaged and clipped to `[0, 1]`.
///
/// This is a distributional stand-in computed from PPMI vectors, not
/// BERTScore, and is always reported as a proxy.
pub fn semantic_overlap_proxy(hyp: &[TokenId], truth: &[TokenId], emb: &PpmiEmbeddings) -> f64 {
    if truth.is_empty() || hyp.is_empty() {
        return 0.0;
    }
    let total: f64 = truth
        .iter()
        .map(|&t| {
            hyp.iter()
                .map(|&h| token_similarity(emb, t, h))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    (total / truth.len() as f64).clamp(0.0, 1.0)
}

/// Attack outcome for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub n: usize,
    pub g: usize,
    pub scheme: String,
    pub seed: u64,
    pub bs_true_ratio: f64,
    pub rbs_true_ratios: Vec<f64>,
    pub max_true_ratio: f64,
    pub bs_proxy: f64,
    pub max_proxy: f64,
    /// Label carried with the proxy columns.
    pub proxy_kind: String,
}

pub const PROXY_LABEL: &str = "ppmi-overlap-proxy";
