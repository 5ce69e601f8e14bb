use std::collections::HashMap;

use crate::lattice::TokenId;

/// Sparse positive-PMI co-occurrence vectors, one L2-normalized row per token.
///
/// Co-occurrences are counted symmetrically within `window` positions inside
/// each document.
#[derive(Debug, Clone)]
pub struct PpmiEmbeddings {
    window: usize,
    rows: Vec<Vec<(TokenId, f64)>>,
    // For each context feature, the rows that carry it.
    postings: Vec<Vec<(TokenId, f64)>>,
}

impl PpmiEmbeddings {
    pub const DEFAULT_WINDOW: usize = 5;

    pub fn build<D: AsRef<[TokenId]>>(corpus: &[D], vocab_size: usize, window: usize) -> Self {
        let mut pairs: Vec<HashMap<TokenId, f64>> = vec![HashMap::new(); vocab_size];
        for doc in corpus {
            let doc = doc.as_ref();
            for (i, &w) in doc.iter().enumerate() {
                if w as usize >= vocab_size {
                    continue;
                }
                for &c in &doc[i + 1..(i + 1 + window).min(doc.len())] {
                    if c as usize >= vocab_size {
                        continue;
                    }
                    *pairs[w as usize].entry(c).or_insert(0.0) += 1.0;
                    *pairs[c as usize].entry(w).or_insert(0.0) += 1.0;
                }
            }
        }
        let marginals: Vec<f64> = pairs.iter().map(|row| row.values().sum()).collect();
        let total: f64 = marginals.iter().sum();

        let mut rows = Vec::with_capacity(vocab_size);
        for (w, row) in pairs.iter().enumerate() {
            let mut vector: Vec<(TokenId, f64)> = row
                .iter()
                .filter_map(|(&c, &n)| {
                    let pmi = (n * total / (marginals[w] * marginals[c as usize])).ln();
                    (pmi > 0.0).then_some((c, pmi))
                })
                .collect();
            vector.sort_by_key(|&(c, _)| c);
            rows.push(vector);
        }
        Self::from_rows(rows, window)
    }

    /// Wrap precomputed rows; each row is normalized here.
    pub fn from_rows(mut rows: Vec<Vec<(TokenId, f64)>>, window: usize) -> Self {
        let vocab_size = rows.len();
        let mut postings = vec![Vec::new(); vocab_size];
        for (w, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for entry in row.iter_mut() {
                    entry.1 /= norm;
                }
            }
            for &(c, v) in row.iter() {
                if (c as usize) < vocab_size {
                    postings[c as usize].push((w as TokenId, v));
                }
            }
        }
        PpmiEmbeddings {
            window,
            rows,
            postings,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, token: TokenId) -> &[(TokenId, f64)] {
        self.rows.get(token as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_zero(&self, token: TokenId) -> bool {
        self.row(token).is_empty()
    }

    pub fn cosine(&self, a: TokenId, b: TokenId) -> f64 {
        let (ra, rb) = (self.row(a), self.row(b));
        let (mut i, mut j, mut dot) = (0, 0, 0.0);
        while i < ra.len() && j < rb.len() {
            match ra[i].0.cmp(&rb[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += ra[i].1 * rb[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        dot
    }

    /// Cosine similarity of `token` against every row.
    pub fn similarities(&self, token: TokenId) -> Vec<f64> {
        let mut scores = vec![0.0; self.rows.len()];
        for &(c, v) in self.row(token) {
            for &(w, u) in &self.postings[c as usize] {
                scores[w as usize] += v * u;
            }
        }
        scores
    }

    /// Rank every other token by cosine similarity to `token` (ties by smaller
    /// id), skip the first `skip` and return the next `take`.
    ///
    /// Returns `None` when `token` has an all-zero row.
    pub fn nearest_tokens(&self, token: TokenId, skip: usize, take: usize) -> Option<Vec<TokenId>> {
        if self.is_zero(token) {
            return None;
        }
        let scores = self.similarities(token);
        let mut ranked: Vec<TokenId> = (0..self.rows.len() as TokenId)
            .filter(|&v| v != token)
            .collect();
        let by_score = |a: &TokenId, b: &TokenId| {
            scores[*b as usize]
                .total_cmp(&scores[*a as usize])
                .then(a.cmp(b))
        };
        let end = (skip + take).min(ranked.len());
        if end < ranked.len() && end > 0 {
            ranked.select_nth_unstable_by(end - 1, by_score);
            ranked.truncate(end);
        }
        ranked.sort_by(by_score);
        Some(ranked.into_iter().skip(skip).take(take).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn toy_corpus() -> Vec<Vec<TokenId>> {
        let mut r = rng::stream(11);
        (0..300)
            .map(|_| {
                let topic = rng::below(&mut r, 4) as TokenId;
                (0..12)
                    .map(|_| topic * 50 + rng::below(&mut r, 50) as TokenId)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn self_cosine_is_one() {
        let emb = PpmiEmbeddings::build(&toy_corpus(), 200, 5);
        for w in 0..200 {
            if !emb.is_zero(w) {
                assert!((emb.cosine(w, w) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exhaustive_ranking_lists_every_other_token() {
        let emb = PpmiEmbeddings::build(&toy_corpus(), 200, 5);
        let mut got = emb.nearest_tokens(7, 0, 199).unwrap();
        got.sort();
        let expected: Vec<TokenId> = (0..200).filter(|&v| v != 7).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn duplicated_row_ranks_first() {
        let rows = vec![
            vec![(0, 1.0), (2, 1.0)],
            vec![(1, 3.0)],
            vec![(0, 2.0), (2, 2.0)],
            vec![(0, 1.0)],
        ];
        let emb = PpmiEmbeddings::from_rows(rows, 5);
        assert_eq!(emb.nearest_tokens(0, 0, 1).unwrap(), vec![2]);
    }

    #[test]
    fn matches_brute_force_scan() {
        let emb = PpmiEmbeddings::build(&toy_corpus(), 200, 5);
        for w in [0u32, 13, 77, 150, 199] {
            // Oracle: dense cosine against every other row, full sort.
            let dense = |t: TokenId| {
                let mut v = vec![0.0; 200];
                for &(c, x) in emb.row(t) {
                    v[c as usize] = x;
                }
                v
            };
            let dw = dense(w);
            let mut scored: Vec<(f64, TokenId)> = (0..200)
                .filter(|&v| v != w)
                .map(|v| (dw.iter().zip(dense(v)).map(|(a, b)| a * b).sum::<f64>(), v))
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let oracle: Vec<TokenId> = scored.iter().skip(10).take(5).map(|s| s.1).collect();
            let got = emb.nearest_tokens(w, 10, 5).unwrap();
            // Compare by score to stay robust to last-ulp differences between summation orders.
            for (g, o) in got.iter().zip(&oracle) {
                assert!((emb.cosine(w, *g) - emb.cosine(w, *o)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_row_reports_none() {
        let emb = PpmiEmbeddings::from_rows(vec![vec![], vec![(0, 1.0)]], 5);
        assert!(emb.nearest_tokens(0, 0, 1).is_none());
    }
}
