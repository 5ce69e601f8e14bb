use std::fs;
use std::path::{Path, PathBuf};

use latticegen::lm::{NGramModel, NGramParams};
use latticegen::metrics::pmi;
use latticegen::vocab::BOS_ID;
use latticegen_cli::config::{ExperimentSpec, SchemeName};
use latticegen_cli::corpus::{self, Dataset, Split};
use latticegen_cli::experiment::{run_with_dataset, to_csv, CellOutcome};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

fn fixture() -> Dataset {
    corpus::load_corpus(&fixture_dir(), corpus::DEFAULT_VOCAB_CAP).unwrap()
}

fn small_spec() -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(fixture_dir());
    spec.trials = 6;
    spec.t_max = 20;
    spec.grid.n = vec![2, 3];
    spec.grid.g = vec![1, 2];
    spec.grid.mix_ratios = vec![0.0, 0.2];
    spec
}

#[test]
fn ingest_counts_match_an_independent_recount() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    for i in 0..10_000u64 {
        let words: Vec<String> = (0..(3 + i % 7)).map(|j| format!("w{}", (i * 31 + j * 17) % 500)).collect();
        if i % 3 == 0 {
            lines.push(format!("p{} q{}\t{}", i % 11, i % 13, words.join(" ")));
        } else {
            lines.push(words.join(" "));
        }
    }
    fs::write(dir.path().join("train.txt"), lines.join("\n") + "\n").unwrap();
    let out = tempfile::tempdir().unwrap();
    let manifest = corpus::ingest(dir.path(), out.path(), corpus::DEFAULT_VOCAB_CAP).unwrap();

    let text = fs::read_to_string(dir.path().join("train.txt")).unwrap();
    let words = text.split_whitespace().count();
    let docs = text.lines().filter(|l| !l.trim().is_empty()).count();
    let prompted = text.lines().filter(|l| l.contains('\t')).count();
    assert_eq!(manifest.train.tokens, words);
    assert_eq!(manifest.train.documents, docs);
    assert_eq!(manifest.train.prompted, prompted);
    assert_eq!(manifest.train.unknown, 0);
}

#[test]
fn prompt_continuations_have_positive_pmi() {
    let data = fixture();
    let eval = NGramModel::train(&data.sequences(Split::Dev), data.vocab.len(), BOS_ID, &NGramParams::new(3)).unwrap();
    let train = &data.train;
    let mut matched = 0.0;
    let mut shuffled = 0.0;
    let docs = 200;
    for i in 0..docs {
        let doc = &train[i];
        let other = &train[(i * 7 + 3) % train.len()];
        matched += pmi(&doc.story, &doc.prompt, &eval);
        shuffled += pmi(&doc.story, &other.prompt, &eval);
    }
    assert!(matched / docs as f64 > 0.0);
    assert!(matched > shuffled);
}

#[test]
fn unigram_evaluator_gives_zero_pmi() {
    let data = fixture();
    let unigram = NGramModel::train(&data.sequences(Split::Dev), data.vocab.len(), BOS_ID, &NGramParams::new(1)).unwrap();
    for doc in data.test.iter().take(20) {
        assert!(pmi(&doc.story, &doc.prompt, &unigram).abs() < 1e-12);
    }
}

#[test]
fn grid_behaves_as_documented() {
    let data = fixture();
    let spec = small_spec();
    let results = run_with_dataset(&spec, &data).unwrap();
    for cell in &results.cells {
        assert!(matches!(cell.outcome, CellOutcome::Ok { .. }), "{} failed", cell.cell.label);
    }
    for g in [1, 2] {
        let vanilla = results.find(&format!("Vanilla, G={g}")).unwrap().summary().unwrap();
        assert_eq!(vanilla.bs_true_ratio.mean, 1.0);
        assert_eq!(vanilla.rbs_max_true_ratio.mean, 1.0);
        let full = results.find(&format!("Synonym 100% w/o lattice, G={g}")).unwrap().summary().unwrap();
        assert!(full.ppl.mean >= vanilla.ppl.mean);
        for n in [2, 3] {
            let par = results.find(&format!("LG parallel, N={n}, G={g}")).unwrap();
            let mix0 = results.find(&format!("LG mixing(0), N={n}, G={g}")).unwrap();
            assert_eq!(par.outcome, mix0.outcome);
        }
    }
}

#[test]
fn cells_do_not_depend_on_their_neighbours() {
    let data = fixture();
    let spec = small_spec();
    let full = run_with_dataset(&spec, &data).unwrap();
    let mut reduced = small_spec();
    reduced.grid.n = vec![3];
    reduced.grid.schemes = vec![SchemeName::Mixing];
    reduced.grid.mix_ratios = vec![0.2];
    reduced.grid.baseline_ratios = vec![];
    let part = run_with_dataset(&reduced, &data).unwrap();
    for cell in &part.cells {
        let twin = full.find(&cell.cell.label).unwrap();
        assert_eq!(twin.outcome, cell.outcome, "{}", cell.cell.label);
    }
}

#[test]
fn failed_cells_carry_a_reason() {
    let mut data = fixture();
    // Prompts holding an id outside the vocabulary make every session fail.
    for doc in &mut data.test {
        doc.prompt = vec![data.vocab.len() as u32 + 5];
    }
    let mut spec = small_spec();
    spec.trials = 2;
    spec.grid.g = vec![1];
    spec.grid.n = vec![2];
    spec.grid.schemes = vec![SchemeName::Parallel];
    let results = run_with_dataset(&spec, &data).unwrap();
    assert_eq!(results.cells.len(), 4);
    for cell in &results.cells {
        match &cell.outcome {
            CellOutcome::Failed { reason } => assert!(reason.contains("trial 0"), "{reason}"),
            other => panic!("{}: expected failure, got {other:?}", cell.cell.label),
        }
    }
    let csv = to_csv(&results).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for line in csv.lines() {
        assert!(line.split(',').all(|f| !f.is_empty()), "empty field in {line}");
    }
}
