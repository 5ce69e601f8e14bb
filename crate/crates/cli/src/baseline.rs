//! Generation without a lattice: plain sampling and the synonym-substitution
//! baseline in which the server sees a noised history.

use latticegen::lattice::Lattice;
use latticegen::lm::{sample, LmBackend, PpmiEmbeddings};
use latticegen::noise::{SYNONYM_SKIP, SYNONYM_TAKE};
use latticegen::protocol::SessionConfig;
use latticegen::{rng, Error, GGramTail, Result, TokenId};
use rand::RngCore;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineOutcome {
    /// Tokens the client keeps: prompt followed by the generation.
    pub true_seq: Vec<TokenId>,
    /// Tokens the server receives.
    pub observed: Vec<TokenId>,
}

fn synonym<R: RngCore>(emb: &PpmiEmbeddings, token: TokenId, vocab_size: usize, rng: &mut R) -> TokenId {
    match emb.nearest_tokens(token, SYNONYM_SKIP, SYNONYM_TAKE) {
        Some(cands) if !cands.is_empty() => cands[rng::below(rng, cands.len())],
        _ => loop {
            let t = rng::below(rng, vocab_size) as TokenId;
            if t != token {
                break t;
            }
        },
    }
}

/// The client samples each true token from the server's distribution, which
/// is conditioned on the observed history, then sends a synonym in its place
/// with probability `ratio`. Prompt tokens are substituted the same way.
///
/// The sampling stream is consumed exactly as in plain generation, so
/// `ratio = 0` reproduces it token for token.
pub fn generate_non_lattice(
    backend: &dyn LmBackend,
    config: &SessionConfig,
    ratio: f64,
    emb: &PpmiEmbeddings,
    sample_seed: u64,
    noise_seed: u64,
) -> Result<BaselineOutcome> {
    let mut sample_rng = rng::stream(sample_seed);
    let mut noise_rng = rng::stream(noise_seed);
    let empty = Lattice::new(1)?;
    let vocab_size = backend.vocab_size();
    if let Some(&token) = config.prompt.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::UnknownToken { token, vocab_size });
    }
    let mut true_seq = Vec::with_capacity(config.steps());
    let mut observed = Vec::with_capacity(config.steps());
    let mut ended = false;
    for step in 1..=config.steps() {
        let token = if step <= config.prompt.len() {
            config.prompt[step - 1]
        } else if ended {
            config.eos.expect("ended implies an eos token")
        } else {
            let tail = GGramTail::of_history(&observed, config.g, config.bos);
            let dist = backend.next_dist(&empty, &tail, config.k)?;
            let token = sample(&dist, &config.sampler, &true_seq, &mut sample_rng);
            ended = Some(token) == config.eos;
            token
        };
        let substitute = ratio >= 1.0 || (ratio > 0.0 && rng::unit(&mut noise_rng) < ratio);
        observed.push(if substitute {
            synonym(emb, token, vocab_size, &mut noise_rng)
        } else {
            token
        });
        true_seq.push(token);
    }
    Ok(BaselineOutcome { true_seq, observed })
}
