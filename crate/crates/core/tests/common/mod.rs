#![allow(dead_code)]

use std::sync::Arc;

use latticegen::lm::{LmBackend, NGramModel, NGramParams, PpmiEmbeddings};
use latticegen::noise::{MixingConfig, NoiseScheme};
use latticegen::protocol::SessionConfig;
use latticegen::rng;
use latticegen::TokenId;

pub const VOCAB: usize = 40;

/// Sequences from a sparse random Markov chain over ids `3..VOCAB`, each
/// closed with eos.
pub fn toy_corpus(seed: u64) -> Vec<Vec<TokenId>> {
    let mut r = rng::stream(seed);
    let words = VOCAB - 3;
    let successors: Vec<Vec<TokenId>> = (0..words)
        .map(|_| (0..4).map(|_| 3 + rng::below(&mut r, words) as TokenId).collect())
        .collect();
    (0..300)
        .map(|_| {
            let mut w = 3 + rng::below(&mut r, words) as TokenId;
            let mut seq = vec![w];
            for _ in 0..25 {
                let list = &successors[(w - 3) as usize];
                w = list[rng::below(&mut r, list.len())];
                seq.push(w);
            }
            seq.push(1);
            seq
        })
        .collect()
}

pub struct Toy {
    pub models: Vec<Arc<NGramModel>>,
    pub embeddings: PpmiEmbeddings,
}

impl Toy {
    pub fn new() -> Self {
        let corpus = toy_corpus(11);
        let models = (1..=3)
            .map(|g| Arc::new(NGramModel::train(&corpus, VOCAB, 0, &NGramParams::new(g + 1)).unwrap()))
            .collect();
        Toy {
            models,
            embeddings: PpmiEmbeddings::build(&corpus, VOCAB, 5),
        }
    }

    /// Backend conditioning on `g` tokens.
    pub fn backend(&self, g: usize) -> Arc<dyn LmBackend> {
        self.models[g - 1].clone()
    }

    pub fn model(&self, g: usize) -> &NGramModel {
        &self.models[g - 1]
    }
}

/// A varied session config for trial `i`.
pub fn random_config(i: u64) -> SessionConfig {
    let mut r = rng::stream(rng::derive_seed(0xC0FFEE, &[i]));
    let n = 2 + rng::below(&mut r, 2);
    let g = 1 + rng::below(&mut r, 2);
    let scheme = match i % 4 {
        0 => NoiseScheme::synonym(),
        1 => NoiseScheme::parallel(),
        2 => NoiseScheme::mixing(0.3),
        _ => NoiseScheme::Mixing(MixingConfig {
            mix_ratio: 0.2,
            prompt_mix_ratio: Some(0.5),
            noise_k: 3,
        }),
    };
    let mut cfg = SessionConfig::new(n, g, 4 + rng::below(&mut r, 9), scheme);
    cfg.prompt = (0..rng::below(&mut r, 5))
        .map(|_| 3 + rng::below(&mut r, VOCAB - 3) as TokenId)
        .collect();
    cfg
}
