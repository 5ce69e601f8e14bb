//! Models trained from a dataset: the server backend, the held-out
//! evaluator and the client's synonym embeddings.

use std::sync::Arc;

use latticegen::lm::{NGramModel, NGramParams, PpmiEmbeddings};
use latticegen::vocab::BOS_ID;
use latticegen::TokenId;

use crate::config::LmSpec;
use crate::corpus::{Dataset, Split};

/// Backend order for tail length `g`.
pub fn backend_order(g: usize) -> usize {
    g + 1
}

/// Evaluator order for tail length `g`: one above the backend.
pub fn evaluator_order(g: usize) -> usize {
    g + 2
}

pub fn train_backend(data: &Dataset, g: usize, lm: &LmSpec) -> latticegen::Result<NGramModel> {
    let params = NGramParams {
        order: backend_order(g),
        add_k: lm.add_k,
        lambdas: lm.lambdas.clone(),
    };
    NGramModel::train(&data.sequences(Split::Train), data.vocab.len(), BOS_ID, &params)
}

/// Trained on the dev split so it never sees the backend's training data.
/// Falls back to the training split when no dev data exists.
pub fn train_evaluator(data: &Dataset, g: usize, lm: &LmSpec) -> latticegen::Result<NGramModel> {
    let split = if data.dev.is_empty() { Split::Train } else { Split::Dev };
    let params = NGramParams {
        order: evaluator_order(g),
        add_k: lm.add_k,
        lambdas: Vec::new(),
    };
    NGramModel::train(&data.sequences(split), data.vocab.len(), BOS_ID, &params)
}

pub fn build_embeddings(data: &Dataset, lm: &LmSpec) -> PpmiEmbeddings {
    PpmiEmbeddings::build(&data.sequences(Split::Train), data.vocab.len(), lm.embedding_window)
}

/// Backend and evaluator for one tail length.
pub struct ModelPair {
    pub g: usize,
    pub backend: Arc<NGramModel>,
    pub evaluator: NGramModel,
}

impl ModelPair {
    pub fn train(data: &Dataset, g: usize, lm: &LmSpec) -> latticegen::Result<Self> {
        Ok(ModelPair {
            g,
            backend: Arc::new(train_backend(data, g, lm)?),
            evaluator: train_evaluator(data, g, lm)?,
        })
    }
}

/// Prompt used for trial `i`: the i-th test document's prompt (cycling),
/// or the first tokens of its story when it has none.
pub fn trial_prompt(data: &Dataset, trial: usize) -> Vec<TokenId> {
    const FALLBACK_PROMPT: usize = 8;
    let docs = if data.test.is_empty() { &data.train } else { &data.test };
    let doc = &docs[trial % docs.len()];
    if doc.prompt.is_empty() {
        doc.story.iter().take(FALLBACK_PROMPT).copied().collect()
    } else {
        doc.prompt.clone()
    }
}
