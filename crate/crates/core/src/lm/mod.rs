//! Language-model backends and the sparse distributions they emit.

mod embeddings;
mod ngram;
mod sampler;

pub use embeddings::PpmiEmbeddings;
pub use ngram::{perplexity, perplexity_with_context, NGramModel, NGramParams};
pub use sampler::{sample, SamplerConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lattice::{GGramTail, Lattice, TokenId};

/// Default number of entries a server sends per distribution.
pub const DEFAULT_WIRE_K: usize = 50;

/// Next-token model as seen by the server.
///
/// `full_dist` must be a pure function of its arguments and the loaded model.
pub trait LmBackend: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Length of the tail the backend conditions on.
    fn tail_len(&self) -> usize;

    /// Probabilities over the whole vocabulary for the token following `tail`.
    fn full_dist(&self, context: &Lattice, tail: &GGramTail) -> Result<Vec<f64>>;

    /// The top-`k` entries of [`LmBackend::full_dist`] as a sparse distribution.
    fn next_dist(&self, context: &Lattice, tail: &GGramTail, k: usize) -> Result<TailDistribution> {
        let probs = self.full_dist(context, tail)?;
        Ok(TailDistribution::from_probs(tail.clone(), &probs, k))
    }
}

/// Conditional log-probabilities over plain token histories, used for scoring
/// (perplexity, PMI).
pub trait ConditionalModel {
    /// `log P(token | history)`; `history` excludes the implicit bos prefix.
    fn log_prob(&self, history: &[TokenId], token: TokenId) -> f64;
}

/// Sparse next-token distribution for one tail: at most K `(token, log-prob)`
/// pairs sorted by descending log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDistribution {
    pub tail: GGramTail,
    pub entries: Vec<(TokenId, f64)>,
}

impl TailDistribution {
    /// Keep the `k` most probable tokens (ties by smaller id) and store their
    /// log-probabilities rounded to 9 significant digits.
    pub fn from_probs(tail: GGramTail, probs: &[f64], k: usize) -> Self {
        let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
        let by_prob = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
        if k < order.len() {
            order.select_nth_unstable_by(k, by_prob);
            order.truncate(k);
        }
        order.sort_by(by_prob);
        let entries = order
            .into_iter()
            .map(|i| (i as TokenId, quantize(probs[i].ln().min(0.0))))
            .collect();
        TailDistribution { tail, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn log_prob(&self, token: TokenId) -> Option<f64> {
        self.entries
            .iter()
            .find(|(t, _)| *t == token)
            .map(|&(_, lp)| lp)
    }

    /// The `k` leading entries.
    pub fn top(&self, k: usize) -> &[(TokenId, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn min_log_prob(&self) -> Option<f64> {
        self.entries.last().map(|&(_, lp)| lp)
    }

    /// Check the structural invariants: distinct ids, finite non-positive
    /// log-probabilities in non-increasing order, at most `k` entries.
    pub fn validate(&self, k: usize, vocab_size: usize) -> std::result::Result<(), String> {
        if self.entries.len() > k {
            return Err(format!("{} entries exceed K={k}", self.entries.len()));
        }
        for (i, &(token, lp)) in self.entries.iter().enumerate() {
            if token as usize >= vocab_size {
                return Err(format!("token {token} outside vocabulary"));
            }
            if !lp.is_finite() || lp > 0.0 {
                return Err(format!("bad log-probability {lp}"));
            }
            if i > 0 && lp > self.entries[i - 1].1 {
                return Err("entries not sorted".into());
            }
            if self.entries[..i].iter().any(|&(t, _)| t == token) {
                return Err(format!("duplicate token {token}"));
            }
        }
        Ok(())
    }
}

/// Round to 9 significant digits, the precision carried on the wire.
pub fn quantize(x: f64) -> f64 {
    format_log_prob(x).parse().unwrap_or(x)
}

/// Decimal rendering used on the wire.
pub fn format_log_prob(x: f64) -> String {
    format!("{x:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_selection_is_sorted_prefix() {
        let probs = [0.1, 0.4, 0.05, 0.4, 0.05];
        let d = TailDistribution::from_probs(GGramTail(vec![0]), &probs, 3);
        let ids: Vec<_> = d.entries.iter().map(|e| e.0).collect();
        assert_eq!(ids, vec![1, 3, 0]);
        assert!(d.validate(3, 5).is_ok());
        let all = TailDistribution::from_probs(GGramTail(vec![0]), &probs, 10);
        assert_eq!(&all.entries[..3], &d.entries[..]);
    }

    #[test]
    fn quantization_is_stable() {
        for x in [-0.123456789123, -17.0, -1e-12, 0.0, -745.1] {
            let q = quantize(x);
            assert_eq!(quantize(q).to_bits(), q.to_bits());
            assert_eq!(format_log_prob(q), format_log_prob(x));
        }
    }

    #[test]
    fn validate_catches_violations() {
        let bad = TailDistribution {
            tail: GGramTail(vec![0]),
            entries: vec![(1, -2.0), (2, -1.0)],
        };
        assert!(bad.validate(5, 5).is_err());
        let dup = TailDistribution {
            tail: GGramTail(vec![0]),
            entries: vec![(1, -1.0), (1, -2.0)],
        };
        assert!(dup.validate(5, 5).is_err());
    }
}
