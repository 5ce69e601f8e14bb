//! Word-level vocabulary. One token string per line; line number is the id.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::TokenId;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Ids of the reserved tokens, always the first three lines.
pub const BOS_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Build from token strings. The reserved tokens must come first.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[0] != BOS || tokens[1] != EOS || tokens[2] != UNK {
            return Err(Error::Format(
                "vocabulary must start with <bos>, <eos>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.contains(char::is_whitespace) {
                return Err(Error::Format(format!("bad vocabulary entry on line {}", i + 1)));
            }
            if index.insert(token.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {token:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Frequency-sorted vocabulary from tokenized documents. Ties keep
    /// first-occurrence order; at most `cap` entries including reserved ones.
    pub fn from_documents<'a, I>(docs: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for doc in docs {
            for word in doc {
                let entry = counts.entry(word.as_str()).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut words: Vec<_> = counts
            .into_iter()
            .filter(|(w, _)| ![BOS, EOS, UNK].contains(w))
            .collect();
        words.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let mut tokens: Vec<String> = [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        tokens.extend(
            words
                .into_iter()
                .take(cap.saturating_sub(3))
                .map(|(w, _)| w.to_string()),
        );
        Vocabulary::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// First 16 hex digits of the SHA-256 of the vocabulary file contents.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(&hasher.finalize()[..8])
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for token in &self.tokens {
            writeln!(w, "{token}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let tokens = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        Vocabulary::new(tokens)
    }
}
