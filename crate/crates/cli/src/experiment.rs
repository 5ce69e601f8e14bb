//! Grid runner: sessions, attacks and metrics per cell, aggregated into the
//! results table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use latticegen::attacks::{beam_search_attack, rbs_attack};
use latticegen::lm::{perplexity_with_context, NGramModel, PpmiEmbeddings};
use latticegen::metrics::{max_true_ratio, pmi, semantic_overlap_proxy, true_ratio, PROXY_LABEL};
use latticegen::noise::NoiseScheme;
use latticegen::protocol::{generate_plain, run_in_process, ClientSeeds, ServerOptions, SessionConfig};
use latticegen::vocab::EOS_ID;
use latticegen::{rng, TokenId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::generate_non_lattice;
use crate::config::{ExperimentSpec, LatticeCell};
use crate::corpus::{self, Dataset};
use crate::models::{build_embeddings, trial_prompt, ModelPair};

/// Seed of one trial, derived from the master seed and the cell's (N, G)
/// coordinates. The scheme is deliberately not mixed in, so all schemes in
/// the same (N, G) column share prompts and random streams.
pub fn trial_seed(master: u64, n: usize, g: usize, trial: usize) -> u64 {
    rng::derive_seed(master, &[n as u64, g as u64, trial as u64])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellKind {
    Vanilla,
    Baseline { ratio: f64 },
    Lattice { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub scheme: String,
    pub g: usize,
    pub mix_ratio: Option<f64>,
    pub kind: CellKind,
    #[serde(skip)]
    lattice: Option<LatticeCell>,
}

impl Cell {
    pub fn n(&self) -> usize {
        match self.kind {
            CellKind::Lattice { n } => n,
            _ => 1,
        }
    }
}

/// Metrics of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub ppl: f64,
    pub pmi: f64,
    pub bs_true_ratio: f64,
    pub rbs_max_true_ratio: f64,
    pub bs_proxy: f64,
    pub rbs_max_proxy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Stat { mean, stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub ppl: Stat,
    pub pmi: Stat,
    pub bs_true_ratio: Stat,
    pub rbs_max_true_ratio: Stat,
    pub bs_proxy: Stat,
    pub rbs_max_proxy: Stat,
}

impl CellSummary {
    fn of(trials: &[TrialMetrics]) -> Self {
        let col = |f: fn(&TrialMetrics) -> f64| Stat::of(&trials.iter().map(f).collect::<Vec<_>>());
        CellSummary {
            ppl: col(|t| t.ppl),
            pmi: col(|t| t.pmi),
            bs_true_ratio: col(|t| t.bs_true_ratio),
            rbs_max_true_ratio: col(|t| t.rbs_max_true_ratio),
            bs_proxy: col(|t| t.bs_proxy),
            rbs_max_proxy: col(|t| t.rbs_max_proxy),
        }
    }

    fn columns(&self) -> [Stat; 6] {
        [
            self.ppl,
            self.pmi,
            self.bs_true_ratio,
            self.rbs_max_true_ratio,
            self.bs_proxy,
            self.rbs_max_proxy,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok {
        summary: CellSummary,
        trials: Vec<TrialMetrics>,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    #[serde(flatten)]
    pub cell: Cell,
    pub n: usize,
    pub trials: usize,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn summary(&self) -> Option<&CellSummary> {
        match &self.outcome {
            CellOutcome::Ok { summary, .. } => Some(summary),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub seed: u64,
    pub t_max: usize,
    pub beam_width: usize,
    pub generation_only: bool,
    pub proxy_kind: String,
    pub cells: Vec<CellResult>,
}

impl ExperimentResults {
    pub fn find(&self, label: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.cell.label == label)
    }
}

/// Every cell of the grid, in table order: for each G the vanilla row, the
/// non-lattice baselines, then the lattice cells.
pub fn cells(spec: &ExperimentSpec) -> Vec<Cell> {
    let mut out = Vec::new();
    let lattice = spec.lattice_cells();
    for &g in &spec.grid.g {
        if spec.grid.vanilla {
            out.push(Cell {
                label: format!("Vanilla, G={g}"),
                scheme: "vanilla".into(),
                g,
                mix_ratio: None,
                kind: CellKind::Vanilla,
                lattice: None,
            });
        }
        for &ratio in &spec.grid.baseline_ratios {
            out.push(Cell {
                label: format!("Synonym {}% w/o lattice, G={g}", (ratio * 100.0).round()),
                scheme: "synonym-baseline".into(),
                g,
                mix_ratio: Some(ratio),
                kind: CellKind::Baseline { ratio },
                lattice: None,
            });
        }
        for lc in lattice.iter().filter(|c| c.g == g) {
            out.push(Cell {
                label: lc.label(),
                scheme: match lc.scheme {
                    crate::config::SchemeName::Synonym => "synonym",
                    crate::config::SchemeName::Parallel => "parallel",
                    crate::config::SchemeName::Mixing => "mixing",
                }
                .into(),
                g,
                mix_ratio: lc.mix_ratio,
                kind: CellKind::Lattice { n: lc.n },
                lattice: Some(*lc),
            });
        }
    }
    out
}

struct Context<'a> {
    spec: &'a ExperimentSpec,
    data: &'a Dataset,
    models: &'a [ModelPair],
    emb: &'a PpmiEmbeddings,
}

/// Generation with everything after the first eos dropped.
fn generation(seq: &[TokenId], prompt_len: usize) -> &[TokenId] {
    let gen = &seq[prompt_len..];
    match gen.iter().position(|&t| t == EOS_ID) {
        Some(i) => &gen[..=i],
        None => gen,
    }
}

fn quality(evaluator: &NGramModel, prompt: &[TokenId], true_seq: &[TokenId]) -> (f64, f64) {
    let gen = generation(true_seq, prompt.len());
    (
        perplexity_with_context(evaluator, prompt, gen),
        pmi(gen, prompt, evaluator),
    )
}

impl Context<'_> {
    fn models(&self, g: usize) -> &ModelPair {
        self.models.iter().find(|m| m.g == g).expect("models trained for every G")
    }

    fn region<'s>(&self, seq: &'s [TokenId], prompt_len: usize) -> &'s [TokenId] {
        if self.spec.generation_only {
            &seq[prompt_len..]
        } else {
            seq
        }
    }

    fn plain_config(&self, g: usize, prompt: Vec<TokenId>) -> SessionConfig {
        let mut cfg = SessionConfig::new(1, g, self.spec.t_max, NoiseScheme::parallel());
        cfg.sampler = self.spec.sampler;
        cfg.k = self.spec.k;
        cfg.prompt = prompt;
        cfg
    }

    fn run_trial(&self, cell: &Cell, trial: usize) -> latticegen::Result<TrialMetrics> {
        let models = self.models(cell.g);
        let prompt = trial_prompt(self.data, trial);
        let seeds = ClientSeeds::from_seed(trial_seed(self.spec.seed, cell.n(), cell.g, trial));
        match cell.kind {
            CellKind::Vanilla => {
                let cfg = self.plain_config(cell.g, prompt.clone());
                let seq = generate_plain(models.backend.as_ref(), &cfg, seeds.sample)?;
                let (ppl, pmi) = quality(&models.evaluator, &prompt, &seq);
                Ok(TrialMetrics {
                    ppl,
                    pmi,
                    bs_true_ratio: 1.0,
                    rbs_max_true_ratio: 1.0,
                    bs_proxy: 1.0,
                    rbs_max_proxy: 1.0,
                })
            }
            CellKind::Baseline { ratio } => {
                let cfg = self.plain_config(cell.g, prompt.clone());
                let out = generate_non_lattice(
                    models.backend.as_ref(),
                    &cfg,
                    ratio,
                    self.emb,
                    seeds.sample,
                    seeds.noise,
                )?;
                let (ppl, pmi) = quality(&models.evaluator, &prompt, &out.true_seq);
                let truth = self.region(&out.true_seq, prompt.len());
                let seen = self.region(&out.observed, prompt.len());
                let ratio = true_ratio(seen, truth)?;
                let proxy = semantic_overlap_proxy(seen, truth, self.emb);
                Ok(TrialMetrics {
                    ppl,
                    pmi,
                    bs_true_ratio: ratio,
                    rbs_max_true_ratio: ratio,
                    bs_proxy: proxy,
                    rbs_max_proxy: proxy,
                })
            }
            CellKind::Lattice { .. } => {
                let lc = cell.lattice.expect("lattice cell");
                let cfg = lc.session(self.spec, prompt.clone());
                let options = ServerOptions {
                    max_k: self.spec.k,
                    record_full: self.spec.full_vectors,
                    ..ServerOptions::default()
                };
                let emb = cfg.scheme.needs_embeddings().then_some(self.emb);
                let (transcript, outcome) =
                    run_in_process(cfg, models.backend.clone(), options, emb, seeds)?;
                let (ppl, pmi) = quality(&models.evaluator, &prompt, &outcome.true_seq);
                let truth = self.region(&outcome.true_seq, prompt.len());
                let bs = beam_search_attack(&transcript, self.spec.beam_width)?;
                let rbs = rbs_attack(&transcript, self.spec.beam_width)?;
                let bs_path = self.region(&bs.path, prompt.len());
                let rbs_paths: Vec<&[TokenId]> =
                    rbs.iter().map(|h| self.region(&h.path, prompt.len())).collect();
                Ok(TrialMetrics {
                    ppl,
                    pmi,
                    bs_true_ratio: true_ratio(bs_path, truth)?,
                    rbs_max_true_ratio: max_true_ratio(&rbs_paths, truth)?,
                    bs_proxy: semantic_overlap_proxy(bs_path, truth, self.emb),
                    rbs_max_proxy: rbs_paths
                        .iter()
                        .map(|p| semantic_overlap_proxy(p, truth, self.emb))
                        .fold(f64::NEG_INFINITY, f64::max),
                })
            }
        }
    }
}

/// Train the models a spec needs and run every cell.
pub fn run_experiment(spec: &ExperimentSpec) -> anyhow::Result<ExperimentResults> {
    let data = corpus::open(&spec.data, spec.vocab_cap)?;
    run_with_dataset(spec, &data)
}

pub fn run_with_dataset(spec: &ExperimentSpec, data: &Dataset) -> anyhow::Result<ExperimentResults> {
    spec.validate()?;
    let models = spec
        .grid
        .g
        .par_iter()
        .map(|&g| ModelPair::train(data, g, &spec.lm))
        .collect::<latticegen::Result<Vec<_>>>()?;
    let emb = build_embeddings(data, &spec.lm);
    let ctx = Context {
        spec,
        data,
        models: &models,
        emb: &emb,
    };
    let cells = cells(spec);
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<Result<TrialMetrics, String>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            ctx.run_trial(&cells[c], t)
                .map_err(|e| format!("trial {t}: {e}"))
        })
        .collect();
    let mut per_cell = results.chunks(spec.trials);
    let cells = cells
        .into_iter()
        .map(|cell| {
            let chunk = per_cell.next().expect("one chunk per cell");
            let outcome = match chunk.iter().find_map(|r| r.as_ref().err()) {
                Some(reason) => CellOutcome::Failed {
                    reason: reason.clone(),
                },
                None => {
                    let trials: Vec<TrialMetrics> = chunk.iter().map(|r| *r.as_ref().unwrap()).collect();
                    CellOutcome::Ok {
                        summary: CellSummary::of(&trials),
                        trials,
                    }
                }
            };
            CellResult {
                n: cell.n(),
                trials: spec.trials,
                cell,
                outcome,
            }
        })
        .collect();
    Ok(ExperimentResults {
        seed: spec.seed,
        t_max: spec.t_max,
        beam_width: spec.beam_width,
        generation_only: spec.generation_only,
        proxy_kind: PROXY_LABEL.into(),
        cells,
    })
}

const STAT_COLUMNS: [&str; 6] = [
    "ppl",
    "pmi",
    "bs_true_ratio",
    "rbs_max_true_ratio",
    "bs_proxy",
    "rbs_max_proxy",
];

fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "NA".into()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), fmt)
}

pub fn to_csv(results: &ExperimentResults) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "config", "scheme", "lattice", "n", "g", "mix_ratio", "trials", "status", "reason",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    for c in STAT_COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_stderr"));
    }
    header.push("proxy_kind".into());
    w.write_record(&header)?;
    for r in &results.cells {
        let mut row = vec![
            r.cell.label.clone(),
            r.cell.scheme.clone(),
            if matches!(r.cell.kind, CellKind::Lattice { .. }) { "yes" } else { "no" }.into(),
            r.n.to_string(),
            r.cell.g.to_string(),
            fmt_opt(r.cell.mix_ratio),
            r.trials.to_string(),
        ];
        match &r.outcome {
            CellOutcome::Ok { summary, .. } => {
                row.push("ok".into());
                row.push("NA".into());
                for s in summary.columns() {
                    row.push(fmt(s.mean));
                    row.push(fmt(s.stderr));
                }
            }
            CellOutcome::Failed { reason } => {
                row.push("failed".into());
                row.push(reason.clone());
                row.extend(std::iter::repeat_n("NA".to_string(), 2 * STAT_COLUMNS.len()));
            }
        }
        row.push(results.proxy_kind.clone());
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn to_markdown(results: &ExperimentResults) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| Config | PPL | PMI | BS true-ratio | RBS max-true-ratio | BS proxy | RBS max-proxy |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for r in &results.cells {
        let cols: Vec<String> = match &r.outcome {
            CellOutcome::Ok { summary, .. } => summary
                .columns()
                .iter()
                .enumerate()
                .map(|(i, st)| {
                    let digits = if i == 0 { 2 } else { 3 };
                    format!("{:.*} ± {:.*}", digits, st.mean, digits, st.stderr)
                })
                .collect(),
            CellOutcome::Failed { reason } => {
                let mut v = vec![format!("failed: {reason}")];
                v.extend(std::iter::repeat_n("NA".to_string(), 5));
                v
            }
        };
        let _ = writeln!(s, "| {} | {} |", r.cell.label, cols.join(" | "));
    }
    let _ = writeln!(
        s,
        "\nProxy columns are {}: mean best cosine match of PPMI vectors, not BERTScore.",
        results.proxy_kind
    );
    s
}

/// Write `results.csv`, `results.md` and `results.json` into `dir`.
pub fn write_outputs(results: &ExperimentResults, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (dir.join("results.csv"), to_csv(results)?),
        (dir.join("results.md"), to_markdown(results)),
        (dir.join("results.json"), serde_json::to_string_pretty(results)? + "\n"),
    ];
    let mut written = Vec::new();
    for (path, body) in files {
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_matches_hand_computation() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample variance 5/3, stderr sqrt(5/12)
        assert!((s.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[7.0]).stderr, 0.0);
    }

    #[test]
    fn generation_stops_after_eos() {
        assert_eq!(generation(&[5, 6, 7, EOS_ID, EOS_ID], 1), &[6, 7, EOS_ID]);
        assert_eq!(generation(&[5, 6, 7], 1), &[6, 7]);
    }

    #[test]
    fn trial_seeds_ignore_scheme_and_separate_cells() {
        assert_ne!(trial_seed(1, 2, 1, 0), trial_seed(1, 3, 1, 0));
        assert_ne!(trial_seed(1, 2, 1, 0), trial_seed(1, 2, 2, 0));
        assert_ne!(trial_seed(1, 2, 1, 0), trial_seed(1, 2, 1, 1));
    }
}
