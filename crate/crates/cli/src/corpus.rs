//! Corpus ingestion.
//!
//! Input: a directory of UTF-8 `.txt` files, one document per line. A line
//! may hold a `prompt<TAB>story` pair; otherwise the whole line is the story.
//! Files whose stem starts with `dev`/`valid` or `test` feed those splits;
//! every other file is training data.
//!
//! Output directory layout:
//!
//! ```text
//! vocab.txt        one token per line, line number = id
//! train.ids        one document per line: prompt ids, TAB, story ids
//! dev.ids
//! test.ids
//! manifest.json    vocabulary hash and per-split counts
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use latticegen::lattice::TokenId;
use latticegen::vocab::{Vocabulary, EOS_ID};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_VOCAB_CAP: usize = 8192;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("corpus at {0} has no documents")]
    Empty(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] latticegen::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, IngestError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn of_file(path: &Path) -> Split {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        if stem.starts_with("dev") || stem.starts_with("valid") {
            Split::Dev
        } else if stem.starts_with("test") {
            Split::Test
        } else {
            Split::Train
        }
    }
}

/// A tokenized document. `prompt` is empty for plain lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub prompt: Vec<TokenId>,
    pub story: Vec<TokenId>,
}

impl Document {
    /// Prompt, story and a closing eos: the sequence models are trained on.
    pub fn training_sequence(&self) -> Vec<TokenId> {
        let mut seq = self.prompt.clone();
        seq.extend_from_slice(&self.story);
        seq.push(EOS_ID);
        seq
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Document] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn sequences(&self, split: Split) -> Vec<Vec<TokenId>> {
        self.split(split).iter().map(Document::training_sequence).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub documents: usize,
    pub prompted: usize,
    pub tokens: usize,
    pub unknown: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub train: SplitStats,
    pub dev: SplitStats,
    pub test: SplitStats,
}

struct RawDoc {
    prompt: Vec<String>,
    story: Vec<String>,
}

fn read_raw(path: &Path) -> Result<Vec<RawDoc>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).split(b'\n').enumerate() {
        let bytes = line.map_err(io_err(path))?;
        let malformed = |reason: &str| IngestError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let text = String::from_utf8(bytes).map_err(|_| malformed("invalid UTF-8"))?;
        let text = text.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }
        let mut fields = text.split('\t');
        let (prompt, story) = match (fields.next(), fields.next(), fields.next()) {
            (Some(story), None, _) => ("", story),
            (Some(prompt), Some(story), None) => (prompt, story),
            _ => return Err(malformed("more than one TAB")),
        };
        let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        let doc = RawDoc {
            prompt: words(prompt),
            story: words(story),
        };
        if doc.story.is_empty() {
            return Err(malformed("empty story"));
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

/// Read and tokenize a corpus directory. The vocabulary is built from the
/// training split only.
pub fn load_corpus(dir: &Path, vocab_cap: usize) -> Result<Dataset> {
    let mut raw: [Vec<RawDoc>; 3] = Default::default();
    for path in corpus_files(dir)? {
        let split = Split::of_file(&path) as usize;
        raw[split].extend(read_raw(&path)?);
    }
    if raw[Split::Train as usize].is_empty() {
        return Err(IngestError::Empty(dir.to_path_buf()));
    }
    let train_words: Vec<Vec<String>> = raw[Split::Train as usize]
        .iter()
        .map(|d| d.prompt.iter().chain(&d.story).cloned().collect())
        .collect();
    let vocab = Vocabulary::from_documents(train_words.iter().map(Vec::as_slice), vocab_cap)?;
    let encode = |docs: &[RawDoc]| -> Vec<Document> {
        docs.iter()
            .map(|d| Document {
                prompt: d.prompt.iter().map(|w| vocab.id(w)).collect(),
                story: d.story.iter().map(|w| vocab.id(w)).collect(),
            })
            .collect()
    };
    Ok(Dataset {
        train: encode(&raw[0]),
        dev: encode(&raw[1]),
        test: encode(&raw[2]),
        vocab,
    })
}

fn stats(docs: &[Document]) -> SplitStats {
    SplitStats {
        documents: docs.len(),
        prompted: docs.iter().filter(|d| !d.prompt.is_empty()).count(),
        tokens: docs.iter().map(|d| d.prompt.len() + d.story.len()).sum(),
        unknown: docs
            .iter()
            .flat_map(|d| d.prompt.iter().chain(&d.story))
            .filter(|&&t| t == latticegen::vocab::UNK_ID)
            .count(),
    }
}

pub fn manifest(dataset: &Dataset) -> Manifest {
    Manifest {
        vocab_size: dataset.vocab.len(),
        vocab_hash: dataset.vocab.hash(),
        train: stats(&dataset.train),
        dev: stats(&dataset.dev),
        test: stats(&dataset.test),
    }
}

fn write_ids(path: &Path, docs: &[Document]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let join = |ids: &[TokenId]| ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
    for doc in docs {
        writeln!(w, "{}\t{}", join(&doc.prompt), join(&doc.story)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_ids(path: &Path, vocab_size: usize) -> Result<Vec<Document>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let malformed = |reason: String| IngestError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let (prompt, story) = line
            .split_once('\t')
            .ok_or_else(|| malformed("missing TAB".into()))?;
        let parse = |s: &str| -> Result<Vec<TokenId>> {
            s.split_whitespace()
                .map(|x| match x.parse::<TokenId>() {
                    Ok(t) if (t as usize) < vocab_size => Ok(t),
                    _ => Err(malformed(format!("bad token id {x:?}"))),
                })
                .collect()
        };
        docs.push(Document {
            prompt: parse(prompt)?,
            story: parse(story)?,
        });
    }
    Ok(docs)
}

/// Tokenize `corpus_dir` and write the dataset files into `out_dir`.
pub fn ingest(corpus_dir: &Path, out_dir: &Path, vocab_cap: usize) -> Result<Manifest> {
    let dataset = load_corpus(corpus_dir, vocab_cap)?;
    save_dataset(&dataset, out_dir)
}

pub fn save_dataset(dataset: &Dataset, out_dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let vocab_path = out_dir.join("vocab.txt");
    let file = fs::File::create(&vocab_path).map_err(io_err(&vocab_path))?;
    dataset.vocab.write(BufWriter::new(file))?;
    for split in Split::ALL {
        write_ids(&out_dir.join(format!("{}.ids", split.name())), dataset.split(split))?;
    }
    let manifest = manifest(dataset);
    let manifest_path = out_dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Load a directory written by [`ingest`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let vocab_path = dir.join("vocab.txt");
    let file = fs::File::open(&vocab_path).map_err(io_err(&vocab_path))?;
    let vocab = Vocabulary::read(BufReader::new(file))?;
    let n = vocab.len();
    Ok(Dataset {
        train: read_ids(&dir.join("train.ids"), n)?,
        dev: read_ids(&dir.join("dev.ids"), n)?,
        test: read_ids(&dir.join("test.ids"), n)?,
        vocab,
    })
}

/// Either an ingested dataset directory (has `vocab.txt`) or a raw corpus.
pub fn open(dir: &Path, vocab_cap: usize) -> Result<Dataset> {
    if dir.join("vocab.txt").exists() {
        load_dataset(dir)
    } else {
        load_corpus(dir, vocab_cap)
    }
}
