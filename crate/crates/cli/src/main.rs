use std::fs;
use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use latticegen::attacks::{beam_search_attack, rbs_attack};
use latticegen::lattice::write_lattice;
use latticegen::lm::{NGramModel, NGramParams, SamplerConfig};
use latticegen::metrics::true_ratio;
use latticegen::noise::{MixingConfig, NoiseScheme, NOISE_K};
use latticegen::protocol::{
    run_session, serve_tcp, ClientSeeds, InProcessTransport, ServerOptions, ServerSession, SessionConfig,
    TcpTransport,
};
use latticegen::vocab::BOS_ID;
use latticegen::{TokenId, TranscriptRecord};
use latticegen_cli::config::{BenchSpec, ConfigError, ExperimentSpec, OUTPUT_DIR_ENV};
use latticegen_cli::corpus::{self, Split, DEFAULT_VOCAB_CAP};
use latticegen_cli::{bench, experiment, models};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "latticegen", version, about = "Privacy-aware generation over token lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Synonym,
    Parallel,
    Mixing,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a corpus directory into a dataset directory.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VOCAB_CAP)]
        vocab_cap: usize,
    },
    /// Train an interpolated n-gram model on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        add_k: f64,
        /// Comma-separated interpolation weights, unigram first.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
    /// Serve lattice sessions over TCP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Dataset directory; its vocabulary hash is checked in the handshake.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = latticegen::lm::DEFAULT_WIRE_K)]
        max_k: usize,
        /// Keep untruncated distributions in saved transcripts.
        #[arg(long)]
        full_vectors: bool,
        /// Directory for `.lgt` transcripts, one per session.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Generate text through a lattice session.
    Generate {
        #[arg(long)]
        data: PathBuf,
        /// Server address; without it the model is run in-process.
        #[arg(long, conflicts_with = "model")]
        connect: Option<String>,
        #[arg(long, required_unless_present = "connect")]
        model: Option<PathBuf>,
        /// Session config file (JSON or TOML); overrides the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        g: usize,
        #[arg(long, default_value_t = 60)]
        t_max: usize,
        #[arg(long, value_enum, default_value_t = Scheme::Mixing)]
        scheme: Scheme,
        #[arg(long, default_value_t = 0.1)]
        mix_ratio: f64,
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = "out")]
        out: PathBuf,
    },
    /// Run beam-search and repeated beam-search attacks on a transcript.
    Attack {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long, default_value_t = latticegen::attacks::DEFAULT_BEAM_WIDTH)]
        beam_width: usize,
        /// JSON array of true token ids, for per-step match flags.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid and write results tables.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Measure per-token cost of vanilla and lattice generation.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Failure classes mapped to process exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let is_config = e.chain().any(|c| {
            c.downcast_ref::<ConfigError>().is_some()
                || matches!(c.downcast_ref::<latticegen::Error>(), Some(latticegen::Error::Config(_)))
        });
        if is_config {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest {
            corpus: dir,
            out,
            vocab_cap,
        } => {
            let manifest = corpus::ingest(&dir, &out, vocab_cap).map_err(anyhow::Error::from)?;
            println!("{}", serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)?);
        }
        Command::Train {
            data,
            order,
            out,
            add_k,
            lambdas,
        } => train(&data, order, add_k, lambdas, &out)?,
        Command::Serve {
            model,
            listen,
            data,
            max_k,
            full_vectors,
            transcripts,
        } => serve(&model, &listen, data.as_deref(), max_k, full_vectors, transcripts)?,
        Command::Generate {
            data,
            connect,
            model,
            config,
            n,
            g,
            t_max,
            scheme,
            mix_ratio,
            prompt,
            seed,
            out,
        } => {
            let dataset = corpus::open(&data, DEFAULT_VOCAB_CAP).map_err(anyhow::Error::from)?;
            let cfg = match config {
                Some(path) => latticegen_cli::config::load::<SessionConfig>(&path)?,
                None => {
                    let scheme = match scheme {
                        Scheme::Synonym => NoiseScheme::synonym(),
                        Scheme::Parallel => NoiseScheme::parallel(),
                        Scheme::Mixing => NoiseScheme::Mixing(MixingConfig {
                            mix_ratio,
                            prompt_mix_ratio: None,
                            noise_k: NOISE_K,
                        }),
                    };
                    let mut cfg = SessionConfig::new(n, g, t_max, scheme);
                    cfg.sampler = SamplerConfig::default();
                    cfg.prompt = dataset.vocab.encode(&prompt);
                    cfg
                }
            };
            cfg.validate().map_err(anyhow::Error::from)?;
            generate(&dataset, connect.as_deref(), model.as_deref(), cfg, seed, &out)?;
        }
        Command::Attack {
            transcript,
            beam_width,
            truth,
            out,
        } => attack(&transcript, beam_width, truth.as_deref(), out.as_deref())?,
        Command::Experiment { config } => {
            let spec = ExperimentSpec::from_file(&config)?;
            let results = experiment::run_experiment(&spec)?;
            for path in experiment::write_outputs(&results, &spec.output_dir)? {
                println!("{}", path.display());
            }
            print!("{}", experiment::to_markdown(&results));
        }
        Command::Bench { config } => {
            let spec = BenchSpec::from_file(&config)?;
            let rows = bench::bench_speed(&spec)?;
            bench::write_outputs(&rows, &spec.output_dir)?;
            print!("{}", bench::to_markdown(&rows));
        }
    }
    Ok(())
}

fn train(data: &Path, order: usize, add_k: f64, lambdas: Vec<f64>, out: &Path) -> anyhow::Result<()> {
    let dataset = corpus::open(data, DEFAULT_VOCAB_CAP)?;
    let params = NGramParams {
        order,
        add_k,
        lambdas,
    };
    let model = NGramModel::train(&dataset.sequences(Split::Train), dataset.vocab.len(), BOS_ID, &params)?;
    model.save(BufWriter::new(fs::File::create(out)?))?;
    if !dataset.dev.is_empty() {
        let dev: Vec<TokenId> = dataset.sequences(Split::Dev).concat();
        println!("dev perplexity: {:.3}", latticegen::lm::perplexity(&model, &dev));
    }
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<NGramModel> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(NGramModel::load(BufReader::new(file))?)
}

fn serve(
    model: &Path,
    listen: &str,
    data: Option<&Path>,
    max_k: usize,
    full_vectors: bool,
    transcripts: Option<PathBuf>,
) -> anyhow::Result<()> {
    let backend = Arc::new(load_model(model)?);
    let vocab_hash = match data {
        Some(d) => Some(corpus::open(d, DEFAULT_VOCAB_CAP)?.vocab.hash()),
        None => None,
    };
    let options = ServerOptions {
        max_k,
        vocab_hash,
        record_full: full_vectors,
        ..ServerOptions::default()
    };
    if let Some(dir) = &transcripts {
        fs::create_dir_all(dir)?;
    }
    let listener = TcpListener::bind(listen)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let counter = std::sync::atomic::AtomicUsize::new(0);
    serve_tcp(listener, backend, options, move |peer, result| match result {
        Ok(tr) => {
            let id = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            eprintln!("{peer}: session {id} closed, {} columns, complete={}", tr.lattice.len(), tr.complete);
            if let Some(dir) = &transcripts {
                let path = dir.join(format!("session-{id:05}.lgt"));
                if let Err(e) = fs::File::create(&path).map_err(latticegen::Error::from).and_then(|f| tr.write(f)) {
                    eprintln!("cannot write {}: {e}", path.display());
                }
            }
        }
        Err(e) => eprintln!("{peer}: {e}"),
    })?;
    Ok(())
}

#[derive(Serialize)]
struct GenerateReport {
    prompt: String,
    generation: String,
    true_ids: Vec<TokenId>,
    prompt_len: usize,
    columns: usize,
    branches: usize,
    noise_tokens: usize,
    fallbacks: usize,
}

fn generate(
    data: &corpus::Dataset,
    connect: Option<&str>,
    model: Option<&Path>,
    cfg: SessionConfig,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let emb = cfg
        .scheme
        .needs_embeddings()
        .then(|| models::build_embeddings(data, &Default::default()));
    let vocab_hash = data.vocab.hash();
    let seeds = ClientSeeds::from_seed(seed);
    let g = cfg.g;
    let client = seeds.client(cfg, data.vocab.len(), &vocab_hash, emb.as_ref())?;
    fs::create_dir_all(out)?;
    let outcome = match (connect, model) {
        (Some(addr), _) => {
            let mut transport = TcpTransport::connect(addr)?;
            run_session(client, &mut transport)?
        }
        (None, Some(path)) => {
            let backend = Arc::new(load_model(path)?);
            if backend.order() != g + 1 {
                bail!("model order {} does not match G={g}", backend.order());
            }
            let options = ServerOptions {
                vocab_hash: Some(vocab_hash.clone()),
                ..ServerOptions::default()
            };
            let mut transport = InProcessTransport::new(ServerSession::new(backend, options));
            let outcome = run_session(client, &mut transport)?;
            transport
                .server
                .transcript()
                .write(BufWriter::new(fs::File::create(out.join("transcript.lgt"))?))?;
            outcome
        }
        (None, None) => bail!("either --connect or --model is required"),
    };
    write_lattice(
        BufWriter::new(fs::File::create(out.join("lattice.lat"))?),
        &outcome.lattice,
        g,
        &vocab_hash,
    )?;
    let report = GenerateReport {
        prompt: data.vocab.decode(&outcome.true_seq[..outcome.prompt_len]),
        generation: data.vocab.decode(outcome.generation()),
        true_ids: outcome.true_seq.clone(),
        prompt_len: outcome.prompt_len,
        columns: outcome.lattice.len(),
        branches: outcome.stats.branches,
        noise_tokens: outcome.stats.noise_tokens,
        fallbacks: outcome.stats.fallbacks,
    };
    fs::write(out.join("generation.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}", report.generation);
    Ok(())
}

#[derive(Serialize)]
struct HypothesisReport {
    path: Vec<TokenId>,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matches: Option<Vec<bool>>,
}

#[derive(Serialize)]
struct AttackOutput {
    n: usize,
    g: usize,
    columns: usize,
    beam_width: usize,
    full_vectors: bool,
    beam_search: HypothesisReport,
    repeated_beam_search: Vec<HypothesisReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_true_ratio: Option<f64>,
}

fn attack(path: &Path, beam_width: usize, truth: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let tr = TranscriptRecord::read(BufReader::new(fs::File::open(path)?))?;
    let truth: Option<Vec<TokenId>> = match truth {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => None,
    };
    let report = |h: latticegen::attacks::AttackHypothesis| -> anyhow::Result<HypothesisReport> {
        let (ratio, matches) = match &truth {
            Some(t) => (
                Some(true_ratio(&h.path, t)?),
                Some(h.path.iter().zip(t).map(|(a, b)| a == b).collect()),
            ),
            None => (None, None),
        };
        Ok(HypothesisReport {
            path: h.path,
            score: h.score,
            true_ratio: ratio,
            matches,
        })
    };
    let bs = report(beam_search_attack(&tr, beam_width)?)?;
    let rbs = rbs_attack(&tr, beam_width)?
        .into_iter()
        .map(report)
        .collect::<anyhow::Result<Vec<_>>>()?;
    let max_true_ratio = truth
        .as_ref()
        .map(|_| rbs.iter().filter_map(|h| h.true_ratio).fold(0.0, f64::max));
    let output = AttackOutput {
        n: tr.n,
        g: tr.g,
        columns: tr.lattice.len(),
        beam_width,
        full_vectors: tr.full_vectors,
        beam_search: bs,
        repeated_beam_search: rbs,
        max_true_ratio,
    };
    let json = serde_json::to_string_pretty(&output)? + "\n";
    match out {
        Some(p) => fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}
