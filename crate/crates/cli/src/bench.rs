//! Wall-clock cost per generated token, vanilla versus lattice sessions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use latticegen::noise::NoiseScheme;
use latticegen::protocol::{generate_plain, run_in_process, ClientSeeds, ServerOptions, SessionConfig};
use serde::{Deserialize, Serialize};

use crate::config::BenchSpec;
use crate::corpus::{self, Dataset};
use crate::models::{trial_prompt, train_backend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub g: usize,
    /// Distributions the server computes per step.
    pub tails: usize,
    pub vanilla_s_per_token: f64,
    pub lg_s_per_token: f64,
    pub slowdown: f64,
}

fn session_config(spec: &BenchSpec, n: usize, g: usize, trial: usize, data: &Dataset) -> SessionConfig {
    let mut cfg = SessionConfig::new(n, g, spec.t_max, NoiseScheme::parallel());
    cfg.k = spec.k;
    cfg.prompt = trial_prompt(data, trial);
    cfg
}

pub fn bench_speed(spec: &BenchSpec) -> anyhow::Result<Vec<BenchRow>> {
    let data = corpus::open(&spec.data, spec.vocab_cap)?;
    bench_with_dataset(spec, &data)
}

/// Sessions run sequentially on the calling thread so timings are not
/// distorted by contention.
pub fn bench_with_dataset(spec: &BenchSpec, data: &Dataset) -> anyhow::Result<Vec<BenchRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &g in &spec.g {
        let backend = std::sync::Arc::new(train_backend(data, g, &spec.lm)?);
        let mut tokens = 0usize;
        let start = Instant::now();
        for trial in 0..spec.repeats {
            let cfg = session_config(spec, 1, g, trial, data);
            let seeds = ClientSeeds::from_seed(latticegen::rng::derive_seed(spec.seed, &[trial as u64]));
            tokens += generate_plain(backend.as_ref(), &cfg, seeds.sample)?.len();
        }
        let vanilla = start.elapsed().as_secs_f64() / tokens as f64;
        for &n in &spec.n {
            let mut tokens = 0usize;
            let start = Instant::now();
            for trial in 0..spec.repeats {
                let cfg = session_config(spec, n, g, trial, data);
                let seeds = ClientSeeds::from_seed(latticegen::rng::derive_seed(spec.seed, &[trial as u64]));
                let options = ServerOptions {
                    max_k: spec.k,
                    ..ServerOptions::default()
                };
                let (_, outcome) = run_in_process(cfg, backend.clone(), options, None, seeds)?;
                tokens += outcome.true_seq.len();
            }
            let lg = start.elapsed().as_secs_f64() / tokens as f64;
            rows.push(BenchRow {
                n,
                g,
                tails: n.pow(g as u32),
                vanilla_s_per_token: vanilla,
                lg_s_per_token: lg,
                slowdown: lg / vanilla,
            });
        }
    }
    Ok(rows)
}

pub fn to_markdown(rows: &[BenchRow]) -> String {
    let mut s = String::from("| N | G | N^G | vanilla s/token | LG s/token | slowdown |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.3e} | {:.3e} | {:.2}x |",
            r.n, r.g, r.tails, r.vanilla_s_per_token, r.lg_s_per_token, r.slowdown
        );
    }
    s
}

pub fn to_csv(rows: &[BenchRow]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn write_outputs(rows: &[BenchRow], dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("bench.csv");
    let md_path = dir.join("bench.md");
    fs::write(&csv_path, to_csv(rows)?)?;
    fs::write(&md_path, to_markdown(rows))?;
    Ok(vec![csv_path, md_path])
}
