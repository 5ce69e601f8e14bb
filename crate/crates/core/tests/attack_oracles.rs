mod common;

use common::{random_config, Toy};
use latticegen::attacks::{beam_search_attack, exact_attack, exhaustive_attack, rbs_attack, score_path};
use latticegen::metrics::{max_true_ratio, true_ratio};
use latticegen::protocol::{run_in_process, ClientSeeds, ServerOptions};
use latticegen::transcript::random_transcript;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

#[test]
fn beam_dp_and_enumeration_agree_on_small_lattices() {
    let mut count = 0;
    for seed in 0..60u64 {
        for (n, g) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
            let steps = 1 + (seed as usize % 8);
            let tr = random_transcript(n, g, steps, 10 + n, seed * 31 + n as u64 * 7 + g as u64);
            let exact = exact_attack(&tr).unwrap();
            let brute = exhaustive_attack(&tr).unwrap();
            let beam = beam_search_attack(&tr, n.pow(g as u32)).unwrap();
            assert!((exact.score - brute.score).abs() < TOL, "dp vs enumeration, seed {seed}");
            assert!((beam.score - exact.score).abs() < TOL, "beam vs dp, seed {seed}");
            assert!((score_path(&tr, &exact.path).unwrap() - exact.score).abs() < TOL);
            count += 1;
        }
    }
    assert!(count >= 200);
}

#[test]
fn dp_matches_full_width_beam_on_longer_transcripts() {
    for seed in 0..100u64 {
        let n = 2 + (seed % 2) as usize;
        let g = 1 + (seed / 2 % 2) as usize;
        let tr = random_transcript(n, g, 20, 30, 5000 + seed);
        let exact = exact_attack(&tr).unwrap();
        let beam = beam_search_attack(&tr, n.pow(g as u32)).unwrap();
        assert!((beam.score - exact.score).abs() < TOL, "seed {seed}");
    }
}

#[test]
fn dp_matches_enumeration_for_width_two_up_to_ten_steps() {
    for steps in 1..=10 {
        for seed in 0..5u64 {
            let tr = random_transcript(2, 1 + (seed % 2) as usize, steps, 12, 900 + seed + 10 * steps as u64);
            let exact = exact_attack(&tr).unwrap();
            let brute = exhaustive_attack(&tr).unwrap();
            assert!((exact.score - brute.score).abs() < TOL);
        }
    }
}

#[test]
fn rbs_hypotheses_partition_the_truth() {
    let toy = Toy::new();
    let mut runs = 0;
    for i in 0..520u64 {
        let cfg = random_config(i);
        let n = cfg.n;
        let emb = cfg.scheme.needs_embeddings().then_some(&toy.embeddings);
        let (tr, out) = run_in_process(
            cfg.clone(),
            toy.backend(cfg.g),
            ServerOptions::default(),
            emb,
            ClientSeeds::from_seed(i),
        )
        .unwrap();
        let hyps = rbs_attack(&tr, 4).unwrap();
        assert_eq!(hyps.len(), n);
        let paths: Vec<&[u32]> = hyps.iter().map(|h| h.path.as_slice()).collect();
        let hits: usize = paths
            .iter()
            .map(|p| p.iter().zip(&out.true_seq).filter(|(a, b)| a == b).count())
            .sum();
        assert_eq!(hits, out.true_seq.len(), "run {i}");
        let best = max_true_ratio(&paths, &out.true_seq).unwrap();
        assert!(best * n as f64 >= 1.0 - 1e-12, "run {i}");
        let ratios: Vec<f64> = paths.iter().map(|p| true_ratio(p, &out.true_seq).unwrap()).collect();
        assert!(ratios.iter().all(|r| (0.0..=1.0).contains(r)));
        runs += 1;
    }
    assert!(runs >= 500);
}

#[test]
fn attacks_run_on_truncated_transcripts() {
    let toy = Toy::new();
    for i in 0..20u64 {
        let mut cfg = random_config(i);
        cfg.k = 5;
        let emb = cfg.scheme.needs_embeddings().then_some(&toy.embeddings);
        let (tr, _) =
            run_in_process(cfg.clone(), toy.backend(cfg.g), ServerOptions::default(), emb, ClientSeeds::from_seed(i))
                .unwrap();
        assert!(!tr.full_vectors);
        let exact = exact_attack(&tr).unwrap();
        let beam = beam_search_attack(&tr, cfg.n.pow(cfg.g as u32)).unwrap();
        assert!(exact.score.is_finite());
        assert!((beam.score - exact.score).abs() < TOL);
    }
}

/// Widening a beam below the full state count can lose the path a narrower
/// beam found: here greedy search beats width 2.
#[test]
fn beam_score_is_not_monotone_below_full_width() {
    let tr = random_transcript(4, 2, 7, 16, 10253389549178058651);
    let exact = exact_attack(&tr).unwrap().score;
    let scores: Vec<f64> = (1..=4).map(|b| beam_search_attack(&tr, b).unwrap().score).collect();
    assert!(scores[1] < scores[0] - 1e-3);
    assert!(scores.iter().all(|&s| s <= exact + TOL));
    assert!((scores[3] - exact).abs() < TOL);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Every beam is bounded by the exact optimum and reaches it once the
    /// width covers all tail states, so no width beats a full-width beam.
    #[test]
    fn full_width_beams_dominate_narrower_ones(
        seed in any::<u64>(),
        n in 2usize..=4,
        g in 1usize..=2,
        steps in 1usize..=12,
        b1 in 1usize..=20,
    ) {
        let tr = random_transcript(n, g, steps, 16, seed);
        let exact = exact_attack(&tr).unwrap().score;
        let narrow = beam_search_attack(&tr, b1).unwrap();
        let full = beam_search_attack(&tr, n.pow(g as u32).max(b1)).unwrap();
        prop_assert!(narrow.score <= exact + TOL);
        prop_assert!((full.score - exact).abs() < TOL);
        prop_assert!(full.score >= narrow.score - TOL);
    }

    #[test]
    fn rbs_identity_on_random_truths(seed in any::<u64>(), n in 2usize..=4, g in 1usize..=2, steps in 1usize..=10, pick in any::<u64>()) {
        let tr = random_transcript(n, g, steps, 16, seed);
        let mut r = latticegen::rng::stream(pick);
        let truth: Vec<u32> = tr
            .lattice
            .columns()
            .iter()
            .map(|c| c[latticegen::rng::below(&mut r, n)])
            .collect();
        let hyps = rbs_attack(&tr, 3).unwrap();
        let hits: usize = hyps
            .iter()
            .map(|h| h.path.iter().zip(&truth).filter(|(a, b)| a == b).count())
            .sum();
        prop_assert_eq!(hits, steps);
    }
}
