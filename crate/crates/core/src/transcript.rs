//! What the server legitimately observes during a session: the lattice and
//! every distribution it computed. Attacks consume nothing else.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{enumerate_tails, GGramTail, Lattice, TokenId};
use crate::rng;
use crate::lm::TailDistribution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub n: usize,
    pub g: usize,
    pub k: usize,
    pub bos: TokenId,
    pub vocab_size: usize,
    /// Whether `saved_dists` holds untruncated distributions.
    pub full_vectors: bool,
    /// False when the session aborted; such transcripts are not attacked.
    pub complete: bool,
    pub lattice: Lattice,
    /// `saved_dists[t - 1]` scores column `t`: the distributions for every
    /// tail of the lattice before column `t`, in canonical tail order.
    pub saved_dists: Vec<Vec<TailDistribution>>,
}

impl TranscriptRecord {
    /// Check that every step carries `n^g` distributions for the expected tails.
    pub fn validate(&self) -> Result<()> {
        if !self.complete {
            return Err(Error::Transcript("session did not complete".into()));
        }
        if self.saved_dists.len() != self.lattice.len() {
            return Err(Error::Transcript(format!(
                "{} distribution steps for {} columns",
                self.saved_dists.len(),
                self.lattice.len()
            )));
        }
        let mut prefix = Lattice::new(self.n)?;
        for (step, dists) in self.saved_dists.iter().enumerate() {
            let tails = enumerate_tails(&prefix, self.g, self.bos);
            if dists.len() != tails.len() {
                return Err(Error::Transcript(format!(
                    "step {}: {} distributions, expected {}",
                    step + 1,
                    dists.len(),
                    tails.len()
                )));
            }
            for (d, tail) in dists.iter().zip(&tails) {
                if &d.tail != tail {
                    return Err(Error::Transcript(format!(
                        "step {}: tail {:?} out of canonical order",
                        step + 1,
                        d.tail.tokens()
                    )));
                }
            }
            prefix.push_column(self.lattice.columns()[step].clone())?;
        }
        Ok(())
    }

    /// Write as `.lgt` JSON.
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// Random complete transcript with full distributions over `vocab` tokens,
/// for exercising attacks without running a session. Column tokens are
/// drawn from `1..vocab`; token 0 is bos.
pub fn random_transcript(n: usize, g: usize, steps: usize, vocab: usize, seed: u64) -> TranscriptRecord {
    let mut r = rng::stream(seed);
    let mut lattice = Lattice::new(n).expect("n >= 1");
    let mut saved = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut memo: HashMap<GGramTail, TailDistribution> = HashMap::new();
        let dists = enumerate_tails(&lattice, g, 0)
            .into_iter()
            .map(|tail| {
                memo.entry(tail.clone())
                    .or_insert_with(|| {
                        let probs: Vec<f64> = (0..vocab).map(|_| rng::unit(&mut r) + 0.01).collect();
                        let z: f64 = probs.iter().sum();
                        let probs: Vec<f64> = probs.iter().map(|p| p / z).collect();
                        TailDistribution::from_probs(tail, &probs, vocab)
                    })
                    .clone()
            })
            .collect();
        saved.push(dists);
        let mut column = Vec::with_capacity(n);
        while column.len() < n {
            let token = 1 + rng::below(&mut r, vocab - 1) as TokenId;
            if !column.contains(&token) {
                column.push(token);
            }
        }
        lattice.push_column(column).expect("distinct column");
    }
    TranscriptRecord {
        n,
        g,
        k: vocab,
        bos: 0,
        vocab_size: vocab,
        full_vectors: true,
        complete: true,
        lattice,
        saved_dists: saved,
    }
}
