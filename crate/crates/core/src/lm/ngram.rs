//! Interpolated add-k n-gram model.
//!
//! For a model of order `n`, the probability of `w` after history `h` is
//!
//! ```text
//! P(w | h) = sum_{j=0}^{n-1} lambda_j * (c(h_j, w) + k) / (c(h_j) + k|V|)
//! ```
//!
//! where `h_j` is the last `j` tokens of the bos-padded history. Every order
//! is normalized on its own, so the mixture sums to one for any history.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ConditionalModel, LmBackend};
use crate::error::{Error, Result};
use crate::lattice::{GGramTail, Lattice, TokenId};

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u32>,
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramParams {
    pub order: usize,
    pub add_k: f64,
    /// Interpolation weights, unigram first. Empty means uniform.
    pub lambdas: Vec<f64>,
}

impl NGramParams {
    pub fn new(order: usize) -> Self {
        NGramParams {
            order,
            add_k: 0.1,
            lambdas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab_size: usize,
    bos: TokenId,
    add_k: f64,
    lambdas: Vec<f64>,
    // tables[j] maps a length-j context to counts of the following token.
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NGramModel {
    pub fn train<D: AsRef<[TokenId]>>(
        corpus: &[D],
        vocab_size: usize,
        bos: TokenId,
        params: &NGramParams,
    ) -> Result<Self> {
        let order = params.order;
        if order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if !(params.add_k > 0.0) || !params.add_k.is_finite() {
            return Err(Error::Config("add-k constant must be positive".into()));
        }
        if bos as usize >= vocab_size {
            return Err(Error::UnknownToken {
                token: bos,
                vocab_size,
            });
        }
        let lambdas = if params.lambdas.is_empty() {
            vec![1.0 / order as f64; order]
        } else {
            params.lambdas.clone()
        };
        if lambdas.len() != order
            || lambdas.iter().any(|l| !(*l >= 0.0))
            || (lambdas.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "need {order} non-negative interpolation weights summing to 1"
            )));
        }

        let mut tables: Vec<HashMap<Vec<TokenId>, ContextCounts>> = vec![HashMap::new(); order];
        let mut seen = 0usize;
        for doc in corpus {
            let doc = doc.as_ref();
            let mut padded = vec![bos; order - 1];
            padded.extend_from_slice(doc);
            for (i, &token) in doc.iter().enumerate() {
                if token as usize >= vocab_size {
                    return Err(Error::UnknownToken { token, vocab_size });
                }
                seen += 1;
                let end = i + order - 1;
                for (j, table) in tables.iter_mut().enumerate() {
                    let counts = table.entry(padded[end - j..end].to_vec()).or_default();
                    counts.total += 1;
                    *counts.next.entry(token).or_insert(0) += 1;
                }
            }
        }
        if seen == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(NGramModel {
            order,
            vocab_size,
            bos,
            add_k: params.add_k,
            lambdas,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    /// Pad or trim `history` to the `order - 1` tokens the model conditions on.
    fn context(&self, history: &[TokenId]) -> Vec<TokenId> {
        GGramTail::of_history(history, self.order - 1, self.bos).0
    }

    fn level(&self, context: &[TokenId], j: usize) -> Option<&ContextCounts> {
        self.tables[j].get(&context[context.len() - j..])
    }

    /// Dense distribution following `history`.
    pub fn distribution(&self, history: &[TokenId]) -> Vec<f64> {
        let context = self.context(history);
        let kv = self.add_k * self.vocab_size as f64;
        let mut base = 0.0;
        let mut levels = Vec::with_capacity(self.order);
        for j in 0..self.order {
            let counts = self.level(&context, j);
            let denom = counts.map_or(0, |c| c.total) as f64 + kv;
            base += self.lambdas[j] * self.add_k / denom;
            levels.push((counts, self.lambdas[j] / denom));
        }
        let mut probs = vec![base; self.vocab_size];
        for (counts, scale) in levels {
            if let Some(counts) = counts {
                for (&token, &c) in &counts.next {
                    probs[token as usize] += scale * c as f64;
                }
            }
        }
        probs
    }

    /// `P(token | history)` without materializing the full distribution.
    pub fn prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let context = self.context(history);
        let kv = self.add_k * self.vocab_size as f64;
        (0..self.order)
            .map(|j| {
                let (count, total) = self.level(&context, j).map_or((0, 0), |c| {
                    (c.next.get(&token).copied().unwrap_or(0), c.total)
                });
                self.lambdas[j] * (count as f64 + self.add_k) / (total as f64 + kv)
            })
            .sum()
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&ModelHeader {
            order: self.order,
            vocab_size: self.vocab_size,
            bos: self.bos,
            add_k: self.add_k,
            lambdas: self.lambdas.clone(),
        })?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for table in &self.tables {
            let mut contexts: Vec<_> = table.iter().collect();
            contexts.sort_by(|a, b| a.0.cmp(b.0));
            w.write_all(&(contexts.len() as u32).to_le_bytes())?;
            for (context, counts) in contexts {
                for &token in context {
                    w.write_all(&token.to_le_bytes())?;
                }
                w.write_all(&counts.total.to_le_bytes())?;
                let mut next: Vec<_> = counts.next.iter().collect();
                next.sort();
                w.write_all(&(next.len() as u32).to_le_bytes())?;
                for (&token, &count) in next {
                    w.write_all(&token.to_le_bytes())?;
                    w.write_all(&count.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not an n-gram model file".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: ModelHeader = serde_json::from_slice(&header)?;
        if header.order == 0 || header.lambdas.len() != header.order {
            return Err(Error::Format("inconsistent model header".into()));
        }
        let mut tables = Vec::with_capacity(header.order);
        for j in 0..header.order {
            let n_contexts = u32::from_le_bytes(read_array(&mut r)?);
            let mut table = HashMap::with_capacity(n_contexts as usize);
            for _ in 0..n_contexts {
                let context = (0..j)
                    .map(|_| read_array(&mut r).map(u32::from_le_bytes))
                    .collect::<std::io::Result<Vec<_>>>()?;
                let total = u64::from_le_bytes(read_array(&mut r)?);
                let n_next = u32::from_le_bytes(read_array(&mut r)?);
                let mut next = HashMap::with_capacity(n_next as usize);
                for _ in 0..n_next {
                    let token = u32::from_le_bytes(read_array(&mut r)?);
                    let count = u32::from_le_bytes(read_array(&mut r)?);
                    next.insert(token, count);
                }
                table.insert(context, ContextCounts { total, next });
            }
            tables.push(table);
        }
        Ok(NGramModel {
            order: header.order,
            vocab_size: header.vocab_size,
            bos: header.bos,
            add_k: header.add_k,
            lambdas: header.lambdas,
            tables,
        })
    }
}

const MODEL_MAGIC: &[u8; 4] = b"LGNM";
const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    order: usize,
    vocab_size: usize,
    bos: TokenId,
    add_k: f64,
    lambdas: Vec<f64>,
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

impl LmBackend for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn tail_len(&self) -> usize {
        self.order - 1
    }

    /// Only the tail matters; earlier lattice columns are ignored.
    fn full_dist(&self, _context: &Lattice, tail: &GGramTail) -> Result<Vec<f64>> {
        if tail.len() != self.order - 1 {
            return Err(Error::TailLength {
                expected: self.order - 1,
                got: tail.len(),
            });
        }
        if let Some(&token) = tail.tokens().iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::UnknownToken {
                token,
                vocab_size: self.vocab_size,
            });
        }
        Ok(self.distribution(tail.tokens()))
    }
}

impl ConditionalModel for NGramModel {
    fn log_prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        self.prob(history, token).ln()
    }
}

/// `exp` of the mean negative log-probability of `text` after `context`.
pub fn perplexity_with_context<M: ConditionalModel + ?Sized>(
    model: &M,
    context: &[TokenId],
    text: &[TokenId],
) -> f64 {
    if text.is_empty() {
        return f64::NAN;
    }
    let mut history = context.to_vec();
    let mut nll = 0.0;
    for &token in text {
        nll -= model.log_prob(&history, token);
        history.push(token);
    }
    (nll / text.len() as f64).exp()
}

pub fn perplexity<M: ConditionalModel + ?Sized>(model: &M, text: &[TokenId]) -> f64 {
    perplexity_with_context(model, &[], text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn params(order: usize, add_k: f64, lambdas: Vec<f64>) -> NGramParams {
        NGramParams {
            order,
            add_k,
            lambdas,
        }
    }

    #[test]
    fn add_one_bigram() {
        // a=1, b=2, |V|=4; bigram counts (a,b)=2, c(a)=2
        let model =
            NGramModel::train(&[vec![1, 2, 1, 2]], 4, 0, &params(2, 1.0, vec![0.0, 1.0])).unwrap();
        assert!((model.prob(&[1], 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unigram_weight_only_gives_unigram() {
        let corpus = vec![vec![1, 2, 1, 3], vec![3, 3]];
        let model = NGramModel::train(&corpus, 5, 0, &params(3, 0.5, vec![1.0, 0.0, 0.0])).unwrap();
        let unigram = NGramModel::train(&corpus, 5, 0, &params(1, 0.5, vec![])).unwrap();
        let seen = model.distribution(&[1, 2]);
        let unseen = model.distribution(&[4, 4]);
        let reference = unigram.distribution(&[]);
        for i in 0..5 {
            assert!((seen[i] - reference[i]).abs() < 1e-12);
            assert!((unseen[i] - reference[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_for_random_contexts() {
        let mut r = rng::stream(5);
        let corpus: Vec<Vec<TokenId>> = (0..20)
            .map(|_| (0..30).map(|_| rng::below(&mut r, 40) as TokenId + 1).collect())
            .collect();
        let model = NGramModel::train(&corpus, 41, 0, &NGramParams::new(3)).unwrap();
        for _ in 0..100 {
            let ctx: Vec<TokenId> = (0..2).map(|_| rng::below(&mut r, 41) as TokenId).collect();
            let sum: f64 = model.distribution(&ctx).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let token = rng::below(&mut r, 41) as TokenId;
            assert!((model.prob(&ctx, token) - model.distribution(&ctx)[token as usize]).abs() < 1e-15);
        }
    }

    #[test]
    fn training_errors() {
        let empty: Vec<Vec<TokenId>> = vec![vec![]];
        assert!(matches!(
            NGramModel::train(&empty, 4, 0, &NGramParams::new(2)),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            NGramModel::train(&[vec![9]], 4, 0, &NGramParams::new(2)),
            Err(Error::UnknownToken { token: 9, .. })
        ));
        assert!(NGramModel::train(&[vec![1]], 4, 0, &params(2, 0.1, vec![0.7, 0.7])).is_err());
    }

    #[test]
    fn tail_length_checked() {
        let model = NGramModel::train(&[vec![1, 2]], 4, 0, &NGramParams::new(3)).unwrap();
        let lattice = Lattice::new(2).unwrap();
        assert!(model.full_dist(&lattice, &GGramTail(vec![1])).is_err());
        assert!(model.full_dist(&lattice, &GGramTail(vec![1, 2])).is_ok());
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = vec![vec![1, 2, 3, 1, 2], vec![3, 2, 1]];
        let model = NGramModel::train(&corpus, 4, 0, &NGramParams::new(3)).unwrap();
        let mut bytes = Vec::new();
        model.save(&mut bytes).unwrap();
        let loaded = NGramModel::load(&bytes[..]).unwrap();
        assert_eq!(loaded, model);
        let mut again = Vec::new();
        loaded.save(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    struct Uniform(usize);
    impl ConditionalModel for Uniform {
        fn log_prob(&self, _: &[TokenId], _: TokenId) -> f64 {
            -(self.0 as f64).ln()
        }
    }

    struct Oracle(Vec<TokenId>);
    impl ConditionalModel for Oracle {
        fn log_prob(&self, history: &[TokenId], token: TokenId) -> f64 {
            if self.0.get(history.len()) == Some(&token) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    #[test]
    fn perplexity_extremes() {
        assert!((perplexity(&Uniform(64), &[3, 9, 1, 63]) - 64.0).abs() < 1e-6);
        let text = vec![4, 2, 7];
        assert_eq!(perplexity(&Oracle(text.clone()), &text), 1.0);
    }

    #[test]
    fn perplexity_matches_reference() {
        let corpus = vec![vec![1, 2, 3, 2, 1], vec![2, 2, 3]];
        let model = NGramModel::train(&corpus, 5, 0, &NGramParams::new(2)).unwrap();
        let text = [1, 2, 3, 4];
        // Reference: interpolated add-0.1 bigram written out from raw counts.
        let (k, v) = (0.1, 5.0);
        let unigram = |w: usize| {
            let counts = [0.0, 2.0, 4.0, 2.0, 0.0];
            (counts[w] + k) / (8.0 + k * v)
        };
        let bigram = |prev: usize, w: usize| {
            // successor counts per previous token, bos = 0
            let table: [[f64; 5]; 5] = [
                [0.0, 1.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0, 0.0],
                [0.0, 1.0, 1.0, 2.0, 0.0],
                [0.0, 0.0, 1.0, 0.0, 0.0],
                [0.0; 5],
            ];
            let total: f64 = table[prev].iter().sum();
            (table[prev][w] + k) / (total + k * v)
        };
        let mut nll = 0.0;
        let mut prev = 0;
        for &w in &text {
            nll -= (0.5 * unigram(w as usize) + 0.5 * bigram(prev, w as usize)).ln();
            prev = w as usize;
        }
        let expected = (nll / 4.0f64).exp();
        assert!((perplexity(&model, &text) - expected).abs() < 1e-9);
    }
}
