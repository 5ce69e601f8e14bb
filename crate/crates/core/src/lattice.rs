//! The width-N token lattice shared by client and server.
//!
//! A lattice is a list of columns, each holding exactly `width` distinct
//! token ids. Column 0 (the begin-of-sequence column) is implicit and never
//! stored; columns are numbered from 1 in the protocol and indexed from 0 in
//! [`Lattice::columns`].

use std::io::{Read, Write};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type TokenId = u32;

/// A width-N lattice of token options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    width: usize,
    columns: Vec<Vec<TokenId>>,
}

impl Lattice {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("lattice width must be at least 1".into()));
        }
        Ok(Lattice {
            width,
            columns: Vec::new(),
        })
    }

    /// Build a lattice from explicit columns, validating each one.
    pub fn from_columns(width: usize, columns: Vec<Vec<TokenId>>) -> Result<Self> {
        let mut lattice = Lattice::new(width)?;
        for column in columns {
            lattice.push_column(column)?;
        }
        Ok(lattice)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of stored columns (the implicit bos column is not counted).
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Vec<TokenId>] {
        &self.columns
    }

    /// Column `t` in protocol numbering (1-based).
    pub fn column(&self, t: usize) -> Option<&[TokenId]> {
        t.checked_sub(1)
            .and_then(|i| self.columns.get(i))
            .map(Vec::as_slice)
    }

    /// Append one column. Entries must be pairwise distinct.
    pub fn push_column(&mut self, column: Vec<TokenId>) -> Result<()> {
        check_column(&column, self.width)?;
        self.columns.push(column);
        Ok(())
    }

    /// Check every entry against a vocabulary size.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        for &token in self.columns.iter().flatten() {
            if token as usize >= vocab_size {
                return Err(Error::UnknownToken { token, vocab_size });
            }
        }
        Ok(())
    }

    /// Whether `path` picks one member of each column.
    pub fn contains_path(&self, path: &[TokenId]) -> bool {
        path.len() == self.columns.len()
            && path
                .iter()
                .zip(&self.columns)
                .all(|(token, column)| column.contains(token))
    }
}

/// Reject columns of the wrong width or with repeated entries.
pub fn check_column(column: &[TokenId], width: usize) -> Result<()> {
    if column.len() != width {
        return Err(Error::ColumnWidth {
            expected: width,
            got: column.len(),
        });
    }
    for (i, token) in column.iter().enumerate() {
        if column[..i].contains(token) {
            return Err(Error::DuplicateToken(*token));
        }
    }
    Ok(())
}

/// Flatten the lattice: `bos` followed by every column in order.
pub fn linearize(lattice: &Lattice, bos: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(1 + lattice.len() * lattice.width());
    out.push(bos);
    out.extend(lattice.columns.iter().flatten().copied());
    out
}

/// The last `g` tokens of one path through the lattice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GGramTail(pub Vec<TokenId>);

impl GGramTail {
    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// An all-bos tail of length `g`.
    pub fn bos(g: usize, bos: TokenId) -> Self {
        GGramTail(vec![bos; g])
    }

    /// Shift in a new token, dropping the oldest.
    pub fn advance(&self, token: TokenId) -> Self {
        let mut tokens = self.0.clone();
        if !tokens.is_empty() {
            tokens.remove(0);
            tokens.push(token);
        }
        GGramTail(tokens)
    }

    /// The tail formed by the last `g` entries of `history`, left-padded with `bos`.
    pub fn of_history(history: &[TokenId], g: usize, bos: TokenId) -> Self {
        let take = history.len().min(g);
        let mut tokens = vec![bos; g - take];
        tokens.extend_from_slice(&history[history.len() - take..]);
        GGramTail(tokens)
    }
}

/// All `width^g` tails ending at the last stored column.
///
/// The order is lexicographic over column positions, oldest column most
/// significant. Positions before column 1 read from the implicit bos column,
/// so a lattice shorter than `g` yields repeated tails.
pub fn enumerate_tails(lattice: &Lattice, g: usize, bos: TokenId) -> Vec<GGramTail> {
    let n = lattice.width();
    let count = n.pow(g as u32);
    let t = lattice.len();
    (0..count)
        .map(|index| {
            let positions = tail_positions(index, n, g);
            GGramTail(
                positions
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        // Column number of the i-th tail slot, 1-based; <= 0 means bos.
                        let col = t as isize - g as isize + 1 + i as isize;
                        if col <= 0 {
                            bos
                        } else {
                            lattice.columns[col as usize - 1][p]
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Decode a canonical tail index into per-column positions (oldest first).
pub fn tail_positions(mut index: usize, n: usize, g: usize) -> Vec<usize> {
    let mut positions = vec![0; g];
    for slot in positions.iter_mut().rev() {
        *slot = index % n;
        index /= n;
    }
    positions
}

/// Encode per-column positions (oldest first) as a canonical tail index.
pub fn tail_index(positions: &[usize], n: usize) -> usize {
    positions.iter().fold(0, |acc, &p| acc * n + p)
}

/// Result of permuting one column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub tokens: Vec<TokenId>,
    /// `index_map[i]` is the position that input entry `i` moved to.
    pub index_map: Vec<usize>,
}

/// Shuffle a column with the stream seeded by `prime * t`.
///
/// Fisher-Yates from the last slot down, drawing each swap index with
/// [`rng::below`].
pub fn permute_column(tokens: &[TokenId], prime: u64, t: u64) -> Result<Permutation> {
    check_column(tokens, tokens.len())?;
    let mut rng = rng::stream(rng::permutation_seed(prime, t));
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng::below(&mut rng, i + 1);
        order.swap(i, j);
    }
    // order[k] = original index placed at position k
    let mut index_map = vec![0; tokens.len()];
    for (position, &original) in order.iter().enumerate() {
        index_map[original] = position;
    }
    Ok(Permutation {
        tokens: order.iter().map(|&i| tokens[i]).collect(),
        index_map,
    })
}

/// The client's private material: the permutation prime and, per column,
/// where the true token landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSecret {
    prime: u64,
    true_indices: Vec<usize>,
}

impl ClientSecret {
    pub fn new(prime: u64, vocab_size: usize) -> Result<Self> {
        if prime <= vocab_size as u64 || !rng::is_prime(prime) {
            return Err(Error::Config(format!(
                "secret seed {prime} must be a prime larger than the vocabulary"
            )));
        }
        Ok(ClientSecret {
            prime,
            true_indices: Vec::new(),
        })
    }

    /// A random secret drawn from `rng`.
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R, vocab_size: usize) -> Self {
        loop {
            let prime = rng::random_prime(rng);
            if let Ok(secret) = ClientSecret::new(prime, vocab_size) {
                return secret;
            }
        }
    }

    pub fn prime(&self) -> u64 {
        self.prime
    }

    pub fn true_indices(&self) -> &[usize] {
        &self.true_indices
    }

    pub(crate) fn record(&mut self, index: usize) {
        self.true_indices.push(index);
    }
}

const LAT_MAGIC: &[u8; 4] = b"LATF";
const LAT_VERSION: u16 = 1;

/// JSON header of a `.lat` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeHeader {
    pub n: usize,
    pub g: usize,
    pub t: usize,
    pub vocab_hash: String,
}

/// Write a lattice in the `.lat` format.
///
/// Layout: magic `LATF`, u16 LE version, u32 LE header length, UTF-8 JSON
/// header, then `t * n` u32 LE token ids in column order.
pub fn write_lattice<W: Write>(
    mut w: W,
    lattice: &Lattice,
    g: usize,
    vocab_hash: &str,
) -> Result<()> {
    let header = serde_json::to_vec(&LatticeHeader {
        n: lattice.width(),
        g,
        t: lattice.len(),
        vocab_hash: vocab_hash.to_string(),
    })?;
    w.write_all(LAT_MAGIC)?;
    w.write_all(&LAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for &token in lattice.columns.iter().flatten() {
        w.write_all(&token.to_le_bytes())?;
    }
    Ok(())
}

/// Read a `.lat` file written by [`write_lattice`].
pub fn read_lattice<R: Read>(mut r: R) -> Result<(LatticeHeader, Lattice)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != LAT_MAGIC {
        return Err(Error::Format("not a lattice file".into()));
    }
    let mut buf2 = [0u8; 2];
    r.read_exact(&mut buf2)?;
    let version = u16::from_le_bytes(buf2);
    if version != LAT_VERSION {
        return Err(Error::Format(format!("unsupported lattice version {version}")));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let mut header = vec![0u8; u32::from_le_bytes(buf4) as usize];
    r.read_exact(&mut header)?;
    let header: LatticeHeader = serde_json::from_slice(&header)?;
    let mut lattice = Lattice::new(header.n)?;
    for _ in 0..header.t {
        let mut column = Vec::with_capacity(header.n);
        for _ in 0..header.n {
            r.read_exact(&mut buf4)?;
            column.push(u32::from_le_bytes(buf4));
        }
        lattice.push_column(column)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, lattice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linearize_examples() {
        let lattice = Lattice::from_columns(2, vec![vec![5, 9], vec![3, 7]]).unwrap();
        assert_eq!(linearize(&lattice, 0), vec![0, 5, 9, 3, 7]);

        let empty = Lattice::new(3).unwrap();
        assert_eq!(linearize(&empty, 42), vec![42]);

        let seq = Lattice::from_columns(1, vec![vec![4], vec![8], vec![6]]).unwrap();
        assert_eq!(linearize(&seq, 1), vec![1, 4, 8, 6]);
    }

    #[test]
    fn rejects_bad_columns() {
        let mut lattice = Lattice::new(2).unwrap();
        assert!(matches!(
            lattice.push_column(vec![1, 1]),
            Err(Error::DuplicateToken(1))
        ));
        assert!(matches!(
            lattice.push_column(vec![1, 2, 3]),
            Err(Error::ColumnWidth { .. })
        ));
        assert!(lattice.is_empty());
    }

    #[test]
    fn permutation_is_deterministic() {
        let tokens = [11, 22, 33, 44, 55];
        let a = permute_column(&tokens, 104_729, 17).unwrap();
        let b = permute_column(&tokens, 104_729, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn width_one_permutation_is_identity() {
        let p = permute_column(&[9], 104_729, 3).unwrap();
        assert_eq!(p.tokens, vec![9]);
        assert_eq!(p.index_map, vec![0]);
    }

    #[test]
    fn permutation_rejects_duplicates() {
        assert!(permute_column(&[1, 2, 1], 7, 1).is_err());
    }

    #[test]
    fn true_position_is_uniform() {
        // Chi-square goodness of fit over 1000 seeded shuffles, 3 degrees of
        // freedom. The 0.01 critical value is 11.345.
        let mut counts = [0usize; 4];
        for t in 1..=1000 {
            let p = permute_column(&[100, 200, 300, 400], 104_729, t).unwrap();
            counts[p.index_map[0]] += 1;
        }
        let expected = 250.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn tails_examples() {
        let one = Lattice::from_columns(2, vec![vec![1, 2]]).unwrap();
        assert_eq!(
            enumerate_tails(&one, 1, 0),
            vec![GGramTail(vec![1]), GGramTail(vec![2])]
        );

        let two = Lattice::from_columns(2, vec![vec![1, 2], vec![3, 4]]).unwrap();
        let tails: Vec<_> = enumerate_tails(&two, 2, 0)
            .into_iter()
            .map(|t| t.0)
            .collect();
        assert_eq!(tails, vec![vec![1, 3], vec![1, 4], vec![2, 3], vec![2, 4]]);

        let three = Lattice::from_columns(3, vec![vec![1, 2, 3], vec![4, 5, 6]]).unwrap();
        assert_eq!(enumerate_tails(&three, 2, 0).len(), 9);
    }

    #[test]
    fn short_lattice_tails_are_bos_padded() {
        let empty = Lattice::new(2).unwrap();
        let tails = enumerate_tails(&empty, 2, 0);
        assert_eq!(tails.len(), 4);
        assert!(tails.iter().all(|t| t.0 == vec![0, 0]));

        let one = Lattice::from_columns(2, vec![vec![5, 6]]).unwrap();
        let tails: Vec<_> = enumerate_tails(&one, 2, 0).into_iter().map(|t| t.0).collect();
        assert_eq!(tails, vec![vec![0, 5], vec![0, 6], vec![0, 5], vec![0, 6]]);
    }

    #[test]
    fn tail_history_padding() {
        assert_eq!(GGramTail::of_history(&[7], 3, 0).0, vec![0, 0, 7]);
        assert_eq!(GGramTail::of_history(&[1, 2, 3, 4], 2, 0).0, vec![3, 4]);
        assert_eq!(GGramTail(vec![1, 2]).advance(3).0, vec![2, 3]);
    }

    #[test]
    fn secret_requires_large_prime() {
        assert!(ClientSecret::new(104_729, 1000).is_ok());
        assert!(ClientSecret::new(104_730, 1000).is_err());
        assert!(ClientSecret::new(101, 1000).is_err());
    }

    #[test]
    fn lat_file_rejects_garbage() {
        assert!(read_lattice(&b"NOPE\x01\x00"[..]).is_err());
    }

    fn lattice_strategy() -> impl Strategy<Value = Lattice> {
        (1usize..5, 0usize..12).prop_flat_map(|(n, t)| {
            proptest::collection::vec(
                proptest::sample::subsequence((0u32..64).collect::<Vec<_>>(), n)
                    .prop_shuffle(),
                t,
            )
            .prop_map(move |columns| Lattice::from_columns(n, columns).unwrap())
        })
    }

    proptest! {
        #[test]
        fn linearize_length_law(lattice in lattice_strategy()) {
            prop_assert_eq!(linearize(&lattice, 0).len(), 1 + lattice.width() * lattice.len());
        }

        #[test]
        fn permutation_is_a_bijection(
            tokens in proptest::sample::subsequence((0u32..100).collect::<Vec<_>>(), 1..8),
            prime in 2u64..1_000_000,
            t in 1u64..10_000,
        ) {
            let p = permute_column(&tokens, prime, t).unwrap();
            let mut seen = vec![false; tokens.len()];
            for (i, &pos) in p.index_map.iter().enumerate() {
                prop_assert_eq!(p.tokens[pos], tokens[i]);
                prop_assert!(!seen[pos]);
                seen[pos] = true;
            }
        }

        #[test]
        fn tails_are_distinct_and_complete(lattice in lattice_strategy(), g in 1usize..4) {
            prop_assume!(lattice.len() >= g);
            let tails = enumerate_tails(&lattice, g, 1000);
            prop_assert_eq!(tails.len(), lattice.width().pow(g as u32));
            let unique: std::collections::HashSet<_> = tails.iter().collect();
            prop_assert_eq!(unique.len(), tails.len());
            for (index, tail) in tails.iter().enumerate() {
                let positions = tail_positions(index, lattice.width(), g);
                prop_assert_eq!(tail_index(&positions, lattice.width()), index);
                for (slot, &token) in tail.tokens().iter().enumerate() {
                    let col = lattice.len() - g + slot;
                    prop_assert!(lattice.columns()[col].contains(&token));
                }
            }
        }

        #[test]
        fn lat_round_trip(lattice in lattice_strategy(), g in 1usize..4) {
            let mut bytes = Vec::new();
            write_lattice(&mut bytes, &lattice, g, "abc").unwrap();
            let (header, decoded) = read_lattice(&bytes[..]).unwrap();
            prop_assert_eq!(header.g, g);
            prop_assert_eq!(decoded, lattice);
        }
    }
}
