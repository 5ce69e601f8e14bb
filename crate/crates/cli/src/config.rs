//! Experiment and benchmark specifications, loaded from JSON or TOML.

use std::fs;
use std::path::{Path, PathBuf};

use latticegen::lm::SamplerConfig;
use latticegen::noise::{MixingConfig, NoiseScheme, NOISE_K, SYNONYM_SKIP, SYNONYM_TAKE};
use latticegen::protocol::SessionConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DEFAULT_VOCAB_CAP;

/// Environment variable that overrides `output_dir` of any spec.
pub const OUTPUT_DIR_ENV: &str = "LATTICEGEN_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Synonym,
    Parallel,
    Mixing,
}

/// Language-model hyper-parameters shared by backend and evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSpec {
    #[serde(default = "default_add_k")]
    pub add_k: f64,
    /// Interpolation weights for the backend, lowest order first. Empty
    /// means uniform.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_window")]
    pub embedding_window: usize,
}

impl Default for LmSpec {
    fn default() -> Self {
        LmSpec {
            add_k: default_add_k(),
            lambdas: Vec::new(),
            embedding_window: default_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default = "default_ns")]
    pub n: Vec<usize>,
    #[serde(default = "default_gs")]
    pub g: Vec<usize>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SchemeName>,
    #[serde(default = "default_mix_ratios")]
    pub mix_ratios: Vec<f64>,
    #[serde(default)]
    pub prompt_mix_ratio: Option<f64>,
    #[serde(default = "default_noise_k")]
    pub noise_k: usize,
    #[serde(default = "default_true")]
    pub vanilla: bool,
    /// Synonym ratios for the non-lattice baseline rows.
    #[serde(default = "default_baselines")]
    pub baseline_ratios: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n: default_ns(),
            g: default_gs(),
            schemes: default_schemes(),
            mix_ratios: default_mix_ratios(),
            prompt_mix_ratio: None,
            noise_k: default_noise_k(),
            vanilla: true,
            baseline_ratios: default_baselines(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Ingested dataset directory or raw corpus directory.
    pub data: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_beam")]
    pub beam_width: usize,
    /// Save full distributions for the attacker instead of the wire top-K.
    #[serde(default = "default_true")]
    pub full_vectors: bool,
    /// Restrict ratio metrics to the generated suffix.
    #[serde(default)]
    pub generation_only: bool,
    #[serde(default = "default_vocab_cap")]
    pub vocab_cap: usize,
    #[serde(default)]
    pub lm: LmSpec,
    #[serde(default)]
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub data: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bench_ns")]
    pub n: Vec<usize>,
    #[serde(default = "default_bench_gs")]
    pub g: Vec<usize>,
    #[serde(default = "default_bench_t")]
    pub t_max: usize,
    /// Sessions timed per cell.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_vocab_cap")]
    pub vocab_cap: usize,
    #[serde(default)]
    pub lm: LmSpec,
}

fn default_add_k() -> f64 {
    0.1
}
fn default_window() -> usize {
    latticegen::lm::PpmiEmbeddings::DEFAULT_WINDOW
}
fn default_ns() -> Vec<usize> {
    vec![2, 3]
}
fn default_gs() -> Vec<usize> {
    vec![1]
}
fn default_schemes() -> Vec<SchemeName> {
    vec![SchemeName::Synonym, SchemeName::Parallel, SchemeName::Mixing]
}
fn default_mix_ratios() -> Vec<f64> {
    vec![0.1]
}
fn default_noise_k() -> usize {
    NOISE_K
}
fn default_true() -> bool {
    true
}
fn default_baselines() -> Vec<f64> {
    vec![1.0, 0.5]
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_trials() -> usize {
    50
}
fn default_t_max() -> usize {
    60
}
fn default_k() -> usize {
    latticegen::lm::DEFAULT_WIRE_K
}
fn default_beam() -> usize {
    latticegen::attacks::DEFAULT_BEAM_WIDTH
}
fn default_vocab_cap() -> usize {
    DEFAULT_VOCAB_CAP
}
fn default_bench_ns() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_bench_gs() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_bench_t() -> usize {
    60
}
fn default_repeats() -> usize {
    3
}

/// Parse a spec from `path`, choosing TOML or JSON by extension. Relative
/// paths inside the spec are resolved against the spec's directory, and
/// [`OUTPUT_DIR_ENV`] overrides the output directory.
pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |detail: String| ConfigError::Parse {
        path: path.to_path_buf(),
        detail,
    };
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn output_override(default: &Path) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| default.to_path_buf())
}

impl ExperimentSpec {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            data: data.into(),
            output_dir: default_output(),
            seed: 0,
            trials: default_trials(),
            t_max: default_t_max(),
            sampler: SamplerConfig::default(),
            k: default_k(),
            beam_width: default_beam(),
            full_vectors: true,
            generation_only: false,
            vocab_cap: default_vocab_cap(),
            lm: LmSpec::default(),
            grid: Grid::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut spec: ExperimentSpec = load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.data = resolve(base, &spec.data);
        spec.output_dir = output_override(&resolve(base, &spec.output_dir));
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1");
        }
        if self.beam_width == 0 {
            return bad("beam_width must be at least 1");
        }
        if self.grid.g.is_empty() {
            return bad("grid.g is empty");
        }
        if self.grid.g.contains(&0) {
            return bad("G must be at least 1");
        }
        if !self.grid.schemes.is_empty() && self.grid.n.is_empty() {
            return bad("grid.n is empty");
        }
        if self.grid.schemes.contains(&SchemeName::Mixing) && self.grid.mix_ratios.is_empty() {
            return bad("mixing scheme needs at least one mix ratio");
        }
        if self.grid.baseline_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("baseline ratios must lie in [0, 1]");
        }
        if !(self.lm.add_k > 0.0) {
            return bad("lm.add_k must be positive");
        }
        if self.lm.embedding_window == 0 {
            return bad("lm.embedding_window must be at least 1");
        }
        for cell in self.lattice_cells() {
            cell.session(self, Vec::new())
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", cell.label())))?;
        }
        Ok(())
    }

    /// Lattice cells in grid order: G, then N, then scheme, then mix ratio.
    pub fn lattice_cells(&self) -> Vec<LatticeCell> {
        let mut cells = Vec::new();
        for &g in &self.grid.g {
            for &n in &self.grid.n {
                for &scheme in &self.grid.schemes {
                    match scheme {
                        SchemeName::Mixing => {
                            for &r in &self.grid.mix_ratios {
                                cells.push(LatticeCell {
                                    n,
                                    g,
                                    scheme,
                                    mix_ratio: Some(r),
                                });
                            }
                        }
                        _ => cells.push(LatticeCell {
                            n,
                            g,
                            scheme,
                            mix_ratio: None,
                        }),
                    }
                }
            }
        }
        cells
    }
}

impl BenchSpec {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut spec: BenchSpec = load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.data = resolve(base, &spec.data);
        spec.output_dir = output_override(&resolve(base, &spec.output_dir));
        spec.validate()?;
        Ok(spec)
    }

    pub fn new(data: impl Into<PathBuf>) -> Self {
        BenchSpec {
            data: data.into(),
            output_dir: default_output(),
            seed: 0,
            n: default_bench_ns(),
            g: default_bench_gs(),
            t_max: default_bench_t(),
            repeats: default_repeats(),
            k: default_k(),
            vocab_cap: default_vocab_cap(),
            lm: LmSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.n.is_empty() || self.n.contains(&0) {
            return bad("bench n values must be at least 1");
        }
        if self.g.is_empty() || self.g.contains(&0) {
            return bad("bench g values must be at least 1");
        }
        if self.repeats == 0 || self.t_max == 0 {
            return bad("repeats and t_max must be at least 1");
        }
        Ok(())
    }
}

/// One lattice row of the results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeCell {
    pub n: usize,
    pub g: usize,
    pub scheme: SchemeName,
    pub mix_ratio: Option<f64>,
}

impl LatticeCell {
    pub fn noise_scheme(&self, spec: &ExperimentSpec) -> NoiseScheme {
        match self.scheme {
            SchemeName::Synonym => NoiseScheme::Synonym {
                skip: SYNONYM_SKIP,
                take: SYNONYM_TAKE,
            },
            SchemeName::Parallel => NoiseScheme::Parallel {
                noise_k: spec.grid.noise_k,
            },
            SchemeName::Mixing => NoiseScheme::Mixing(MixingConfig {
                mix_ratio: self.mix_ratio.unwrap_or(0.0),
                prompt_mix_ratio: spec.grid.prompt_mix_ratio,
                noise_k: spec.grid.noise_k,
            }),
        }
    }

    pub fn session(&self, spec: &ExperimentSpec, prompt: Vec<latticegen::TokenId>) -> SessionConfig {
        let mut cfg = SessionConfig::new(self.n, self.g, spec.t_max, self.noise_scheme(spec));
        cfg.sampler = spec.sampler;
        cfg.k = spec.k;
        cfg.prompt = prompt;
        cfg
    }

    pub fn label(&self) -> String {
        let scheme = match self.scheme {
            SchemeName::Synonym => "synonym".to_string(),
            SchemeName::Parallel => "parallel".to_string(),
            SchemeName::Mixing => format!("mixing({})", self.mix_ratio.unwrap_or(0.0)),
        };
        format!("LG {scheme}, N={}, G={}", self.n, self.g)
    }
}
