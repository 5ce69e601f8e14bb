//! Synthetic corpus generator for offline tests.
//!
//! Text is drawn from a sparse first-order Markov chain over pseudo-words.
//! Each word has a short successor list with Zipf-shaped weights, so the
//! corpus has strong local structure that a low-order n-gram model can
//! learn. Every line is `prompt<TAB>story` where the story continues the
//! chain from the prompt's last word.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub seed: u64,
    pub words: usize,
    pub successors: usize,
    /// Exponent of the successor weights `1 / rank^s`.
    pub zipf: f64,
    /// Exponent of the global word-frequency prior used to pick successors.
    pub popularity: f64,
    pub prompt_len: (usize, usize),
    pub story_len: (usize, usize),
    pub train_docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            seed: 7,
            words: 600,
            successors: 24,
            zipf: 1.1,
            popularity: 0.8,
            prompt_len: (6, 10),
            story_len: (60, 90),
            train_docs: 2000,
            dev_docs: 400,
            test_docs: 100,
        }
    }
}

pub struct FixtureCorpus {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gl", "kr",
    "pl", "st", "tr", "sh", "th", "ch",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ee"];

fn pseudo_words(rng: &mut SplitMix64, count: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(count);
    while words.len() < count {
        let syllables = rng.random_range(1..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(NUCLEI.choose(rng).unwrap());
        }
        if rng.random_bool(0.3) {
            w.push_str(["n", "r", "s", "l", "k"].choose(rng).unwrap());
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

struct Chain {
    words: Vec<String>,
    /// Per word: successor ids and cumulative weights.
    next: Vec<(Vec<usize>, Vec<f64>)>,
    start: (Vec<usize>, Vec<f64>),
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    weights
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

fn draw(rng: &mut SplitMix64, cum: &[f64]) -> usize {
    let x = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= x).min(cum.len() - 1)
}

impl Chain {
    fn new(p: &FixtureParams, rng: &mut SplitMix64) -> Self {
        let words = pseudo_words(rng, p.words);
        let prior = cumulative((1..=p.words).map(|r| 1.0 / (r as f64).powf(p.popularity)));
        let succ_weights = cumulative((1..=p.successors).map(|r| 1.0 / (r as f64).powf(p.zipf)));
        let pick_list = |rng: &mut SplitMix64| {
            let mut list = Vec::with_capacity(p.successors);
            while list.len() < p.successors {
                let w = draw(rng, &prior);
                if !list.contains(&w) {
                    list.push(w);
                }
            }
            list
        };
        let next = (0..p.words)
            .map(|_| (pick_list(rng), succ_weights.clone()))
            .collect();
        let start = (pick_list(rng), succ_weights.clone());
        Chain { words, next, start }
    }

    fn walk(&self, rng: &mut SplitMix64, from: Option<usize>, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut cur = from;
        for _ in 0..len {
            let (ids, cum) = match cur {
                Some(w) => &self.next[w],
                None => &self.start,
            };
            let w = ids[draw(rng, cum)];
            out.push(w);
            cur = Some(w);
        }
        out
    }

    fn document(&self, rng: &mut SplitMix64, p: &FixtureParams) -> String {
        let plen = rng.random_range(p.prompt_len.0..=p.prompt_len.1);
        let slen = rng.random_range(p.story_len.0..=p.story_len.1);
        let prompt = self.walk(rng, None, plen);
        let story = self.walk(rng, prompt.last().copied(), slen);
        let join = |ids: &[usize]| {
            ids.iter()
                .map(|&i| self.words[i].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!("{}\t{}", join(&prompt), join(&story))
    }
}

pub fn generate(p: &FixtureParams) -> FixtureCorpus {
    let mut rng = SplitMix64::seed_from_u64(p.seed);
    let chain = Chain::new(p, &mut rng);
    let mut docs = |n: usize| (0..n).map(|_| chain.document(&mut rng, p)).collect::<Vec<_>>();
    FixtureCorpus {
        train: docs(p.train_docs),
        dev: docs(p.dev_docs),
        test: docs(p.test_docs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let p = FixtureParams {
            train_docs: 20,
            dev_docs: 2,
            test_docs: 2,
            ..FixtureParams::default()
        };
        let a = generate(&p);
        let b = generate(&p);
        assert_eq!(a.train, b.train);
        for line in a.train.iter().chain(&a.test) {
            let (prompt, story) = line.split_once('\t').unwrap();
            let plen = prompt.split(' ').count();
            let slen = story.split(' ').count();
            assert!((6..=10).contains(&plen));
            assert!((60..=90).contains(&slen));
        }
    }
}
