//! Attacks a curious server can mount on a finished transcript.
//!
//! All of them maximize the path log-likelihood
//! `sum_t log P(path[t] | tail of path before t)` using only the
//! distributions the server saved. A token missing from a truncated
//! distribution is scored with the step floor: the smallest saved
//! log-probability of that step minus `ln 10`.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{tail_index, GGramTail, TokenId};
use crate::noise::DistLookup;
use crate::transcript::TranscriptRecord;

pub const DEFAULT_BEAM_WIDTH: usize = 16;
/// Largest tail state space the DP oracle accepts.
pub const MAX_DP_STATES: usize = 1024;
/// Largest number of paths exhaustive enumeration accepts.
pub const MAX_ENUMERATED_PATHS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackHypothesis {
    pub path: Vec<TokenId>,
    pub score: f64,
}

/// Per-step scores indexed by tail state and candidate position.
struct ScoreTable<'a> {
    n: usize,
    g: usize,
    columns: &'a [Vec<TokenId>],
    // scores[t][tail * n + p]
    scores: Vec<Vec<f64>>,
}

fn step_floor(dists: &[crate::lm::TailDistribution]) -> f64 {
    dists
        .iter()
        .filter_map(|d| d.min_log_prob())
        .fold(f64::INFINITY, f64::min)
        - std::f64::consts::LN_10
}

impl<'a> ScoreTable<'a> {
    fn new(tr: &'a TranscriptRecord) -> Result<Self> {
        tr.validate()?;
        let n = tr.n;
        let columns = tr.lattice.columns();
        let mut scores = Vec::with_capacity(columns.len());
        for (column, dists) in columns.iter().zip(&tr.saved_dists) {
            let floor = step_floor(dists);
            let mut step = Vec::with_capacity(dists.len() * n);
            for d in dists {
                let lookup: HashMap<TokenId, f64> = d.entries.iter().copied().collect();
                step.extend(column.iter().map(|tok| lookup.get(tok).copied().unwrap_or(floor)));
            }
            scores.push(step);
        }
        Ok(ScoreTable {
            n,
            g: tr.g,
            columns,
            scores,
        })
    }

    fn len(&self) -> usize {
        self.columns.len()
    }

    /// Canonical tail index of the `g` positions preceding column `t`
    /// (0-based); positions before the first column count as 0.
    fn tail_of(&self, positions: &[usize], t: usize) -> usize {
        let start = t as isize - self.g as isize;
        let slots: Vec<usize> = (start..t as isize)
            .map(|c| if c < 0 { 0 } else { positions[c as usize] })
            .collect();
        tail_index(&slots, self.n)
    }

    fn score(&self, t: usize, tail: usize, p: usize) -> f64 {
        self.scores[t][tail * self.n + p]
    }

    fn path_score(&self, positions: &[usize]) -> f64 {
        (0..positions.len())
            .map(|t| self.score(t, self.tail_of(positions, t), positions[t]))
            .sum()
    }

    fn tokens(&self, positions: &[usize]) -> Vec<TokenId> {
        positions
            .iter()
            .enumerate()
            .map(|(t, &p)| self.columns[t][p])
            .collect()
    }

    fn cmp_tokens(&self, a: &[usize], b: &[usize]) -> Ordering {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(t, (&pa, &pb))| self.columns[t][pa].cmp(&self.columns[t][pb]))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    fn hypothesis(&self, positions: &[usize], score: f64) -> AttackHypothesis {
        AttackHypothesis {
            path: self.tokens(positions),
            score,
        }
    }
}

#[derive(Clone)]
struct Partial {
    positions: Vec<usize>,
    score: f64,
}

/// Beam search over positions, restricted to `allowed[t][p]`. Hypotheses
/// sharing a tail state are merged, keeping the better one.
fn beam_positions(table: &ScoreTable<'_>, allowed: &[Vec<bool>], beam_width: usize) -> Partial {
    let n = table.n;
    let better = |a: &Partial, b: &Partial| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| table.cmp_tokens(&a.positions, &b.positions))
    };
    let mut beam = vec![Partial {
        positions: Vec::new(),
        score: 0.0,
    }];
    #[allow(clippy::needless_range_loop)]
    for t in 0..table.len() {
        let mut merged: HashMap<usize, Partial> = HashMap::new();
        for hyp in &beam {
            let tail = table.tail_of(&hyp.positions, t);
            for p in (0..n).filter(|&p| allowed[t][p]) {
                let mut positions = hyp.positions.clone();
                positions.push(p);
                let candidate = Partial {
                    score: hyp.score + table.score(t, tail, p),
                    positions,
                };
                let state = table.tail_of(&candidate.positions, t + 1);
                match merged.get(&state) {
                    Some(kept) if better(kept, &candidate).is_le() => {}
                    _ => {
                        merged.insert(state, candidate);
                    }
                }
            }
        }
        beam = merged.into_values().collect();
        beam.sort_by(better);
        beam.truncate(beam_width.max(1));
    }
    beam.swap_remove(0)
}

/// Most likely path under the saved distributions, found by beam search.
/// Ties are broken towards the lexicographically smaller token sequence.
pub fn beam_search_attack(tr: &TranscriptRecord, beam_width: usize) -> Result<AttackHypothesis> {
    let table = ScoreTable::new(tr)?;
    let allowed = vec![vec![true; tr.n]; table.len()];
    let best = beam_positions(&table, &allowed, beam_width);
    Ok(table.hypothesis(&best.positions, best.score))
}

/// Repeated beam search: `n - 1` rounds, each removing the found path's
/// tokens from the lattice; the single path left over is the last hypothesis.
pub fn rbs_attack(tr: &TranscriptRecord, beam_width: usize) -> Result<Vec<AttackHypothesis>> {
    for column in tr.lattice.columns() {
        crate::lattice::check_column(column, tr.n)?;
    }
    let table = ScoreTable::new(tr)?;
    let mut allowed = vec![vec![true; tr.n]; table.len()];
    let mut hyps = Vec::with_capacity(tr.n);
    for _ in 1..tr.n {
        let found = beam_positions(&table, &allowed, beam_width);
        for (t, &p) in found.positions.iter().enumerate() {
            allowed[t][p] = false;
        }
        hyps.push(table.hypothesis(&found.positions, found.score));
    }
    let rest: Vec<usize> = allowed
        .iter()
        .map(|column| column.iter().position(|&a| a).expect("one position left per column"))
        .collect();
    hyps.push(table.hypothesis(&rest, table.path_score(&rest)));
    Ok(hyps)
}

/// Exact maximum-score path by dynamic programming over tail states.
///
/// Among equal-scoring predecessors the one with the smallest state index wins.
pub fn exact_attack(tr: &TranscriptRecord) -> Result<AttackHypothesis> {
    let table = ScoreTable::new(tr)?;
    let (n, g) = (tr.n, tr.g);
    let states = n
        .checked_pow(g as u32)
        .filter(|&s| s <= MAX_DP_STATES)
        .ok_or_else(|| Error::StateSpace(format!("{n}^{g} tail states exceed {MAX_DP_STATES}")))?;
    let steps = table.len();
    if steps == 0 {
        return Ok(AttackHypothesis {
            path: Vec::new(),
            score: 0.0,
        });
    }
    // best[s]: best score of a prefix whose last g positions encode to s.
    let mut best = vec![f64::NEG_INFINITY; states];
    best[0] = 0.0;
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut next = vec![f64::NEG_INFINITY; states];
        let mut from = vec![usize::MAX; states];
        for (s, &score) in best.iter().enumerate() {
            if score == f64::NEG_INFINITY {
                continue;
            }
            for p in 0..n {
                let candidate = score + table.score(t, s, p);
                let target = (s * n + p) % states;
                if candidate > next[target] {
                    next[target] = candidate;
                    from[target] = s;
                }
            }
        }
        best = next;
        back.push(from);
    }
    let (mut state, score) = best
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (s, &v)| if v > acc.1 { (s, v) } else { acc });
    let mut positions = vec![0; steps];
    for t in (0..steps).rev() {
        positions[t] = state % n;
        state = back[t][state];
    }
    Ok(table.hypothesis(&positions, score))
}

/// Enumerate all `n^T` paths; the reference the other attacks are tested
/// against on tiny lattices.
pub fn exhaustive_attack(tr: &TranscriptRecord) -> Result<AttackHypothesis> {
    tr.validate()?;
    let steps = tr.lattice.len();
    let total = (tr.n as u128).pow(steps as u32);
    if total > MAX_ENUMERATED_PATHS as u128 {
        return Err(Error::StateSpace(format!("{total} paths exceed {MAX_ENUMERATED_PATHS}")));
    }
    let mut best: Option<AttackHypothesis> = None;
    for index in 0..total as usize {
        let mut rest = index;
        let mut path = vec![0; steps];
        for t in (0..steps).rev() {
            path[t] = tr.lattice.columns()[t][rest % tr.n];
            rest /= tr.n;
        }
        let score = score_path(tr, &path)?;
        let replace = match &best {
            None => true,
            Some(b) => score > b.score || (score == b.score && path < b.path),
        };
        if replace {
            best = Some(AttackHypothesis { path, score });
        }
    }
    Ok(best.expect("at least one path"))
}

/// Recompute a path's score by looking each tail up by its tokens.
pub fn score_path(tr: &TranscriptRecord, path: &[TokenId]) -> Result<f64> {
    if !tr.lattice.contains_path(path) {
        return Err(Error::Transcript("path leaves the lattice".into()));
    }
    let mut total = 0.0;
    for (t, &token) in path.iter().enumerate() {
        let dists = tr
            .saved_dists
            .get(t)
            .ok_or_else(|| Error::Transcript(format!("no distributions for step {}", t + 1)))?;
        let tail = GGramTail::of_history(&path[..t], tr.g, tr.bos);
        let dist = dists
            .lookup(&tail)
            .ok_or_else(|| Error::Transcript(format!("no distribution for tail {:?}", tail.tokens())))?;
        total += dist.log_prob(token).unwrap_or_else(|| step_floor(dists));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::random_transcript;

    #[test]
    fn width_one_returns_the_only_path() {
        let tr = random_transcript(1, 1, 6, 20, 1);
        let hyp = beam_search_attack(&tr, 4).unwrap();
        let only: Vec<TokenId> = tr.lattice.columns().iter().map(|c| c[0]).collect();
        assert_eq!(hyp.path, only);
        assert!((hyp.score - score_path(&tr, &only).unwrap()).abs() < 1e-12);
        assert_eq!(exact_attack(&tr).unwrap().path, only);
    }

    #[test]
    fn beam_matches_exhaustive_on_small_lattices() {
        for seed in 0..40 {
            let n = 2 + (seed % 2) as usize;
            let g = 1 + (seed / 2 % 2) as usize;
            let tr = random_transcript(n, g, 6, 12, seed);
            let oracle = exhaustive_attack(&tr).unwrap();
            let dp = exact_attack(&tr).unwrap();
            let beam = beam_search_attack(&tr, n.pow(g as u32)).unwrap();
            assert!((oracle.score - dp.score).abs() < 1e-9, "seed {seed}");
            assert!((oracle.score - beam.score).abs() < 1e-9, "seed {seed}");
            assert_eq!(oracle.path, beam.path, "seed {seed}");
        }
    }

    #[test]
    fn rbs_partitions_columns() {
        for seed in 0..20 {
            let n = 2 + (seed % 3) as usize;
            let tr = random_transcript(n, 1 + (seed % 2) as usize, 8, 30, seed);
            let hyps = rbs_attack(&tr, 8).unwrap();
            assert_eq!(hyps.len(), n);
            for (t, column) in tr.lattice.columns().iter().enumerate() {
                let mut got: Vec<_> = hyps.iter().map(|h| h.path[t]).collect();
                let mut want = column.clone();
                got.sort();
                want.sort();
                assert_eq!(got, want);
            }
            for h in &hyps {
                assert!((score_path(&tr, &h.path).unwrap() - h.score).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rbs_first_round_is_the_global_optimum() {
        for seed in 100..120 {
            let tr = random_transcript(2, 1, 6, 15, seed);
            let hyps = rbs_attack(&tr, 2).unwrap();
            assert_eq!(hyps[0].path, exhaustive_attack(&tr).unwrap().path);
        }
    }

    #[test]
    fn missing_entries_use_the_step_floor() {
        let mut tr = random_transcript(2, 1, 3, 10, 7);
        for step in &mut tr.saved_dists {
            for d in step.iter_mut() {
                d.entries.truncate(2);
            }
        }
        tr.full_vectors = false;
        let hyp = beam_search_attack(&tr, 4).unwrap();
        assert!((score_path(&tr, &hyp.path).unwrap() - hyp.score).abs() < 1e-9);
        let floor = step_floor(&tr.saved_dists[0]);
        let min = tr.saved_dists[0]
            .iter()
            .map(|d| d.entries[1].1)
            .fold(f64::INFINITY, f64::min);
        assert!((floor - (min - 10f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn guards_and_malformed_transcripts() {
        let tr = random_transcript(4, 6, 3, 30, 3);
        assert!(matches!(exact_attack(&tr), Err(Error::StateSpace(_))));
        let big = random_transcript(2, 1, 24, 10, 3);
        assert!(matches!(exhaustive_attack(&big), Err(Error::StateSpace(_))));

        let mut broken = random_transcript(2, 1, 4, 10, 4);
        broken.saved_dists[2].pop();
        assert!(matches!(beam_search_attack(&broken, 4), Err(Error::Transcript(_))));
        let mut partial = random_transcript(2, 1, 4, 10, 4);
        partial.complete = false;
        assert!(beam_search_attack(&partial, 4).is_err());
    }
}
