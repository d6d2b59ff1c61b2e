use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
/// Width of the pre-trained word vectors.
pub const WORD_DIM: usize = 300;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id table; ids 0 and 1 are reserved for padding and unknown words.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for t in tokens {
            let t = t.as_ref().to_lowercase();
            if !vocab.index.contains_key(&t) && t != PAD_TOKEN && t != UNK_TOKEN {
                vocab.index.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    /// One token per line, line number = id; the first two lines are the
    /// reserved pad/unk entries.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().map(str::trim).collect();
        if lines.len() < 2 {
            return Err(Error::Format(format!(
                "{}: vocabulary needs the two reserved entries",
                path.display()
            )));
        }
        Ok(Self::from_tokens(&lines[2..]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            let _ = writeln!(text, "{t}");
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Token ids of one query, possibly right-padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<usize>,
    /// `true` for real tokens, which always come first.
    pub mask: Vec<bool>,
}

impl TokenSequence {
    /// Number of real tokens, `N_Q`.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn padded_len(&self) -> usize {
        self.mask.len()
    }
}

/// Lowercased whitespace tokens; unknown words map to [`UNK_ID`].
pub fn tokenize(query: &str, vocab: &Vocab) -> Result<TokenSequence> {
    let ids: Vec<usize> = query
        .split_whitespace()
        .map(|w| vocab.id(&w.to_lowercase()).unwrap_or(UNK_ID))
        .collect();
    if ids.is_empty() {
        return Err(Error::Validation("empty query".into()));
    }
    Ok(TokenSequence {
        mask: vec![true; ids.len()],
        token_ids: ids,
    })
}

/// Builds the `|vocab| × dim` embedding table from a GloVe-style text file.
///
/// Rows of tokens found in the file are copied; every other row except the
/// padding row (kept at zero) is drawn from uniform(-0.1, 0.1) with a
/// generator seeded by `seed`, in id order.
pub fn load_word_vectors(path: &Path, vocab: &Vocab, dim: usize, seed: u64) -> Result<Array2<f64>> {
    let mut table = seeded_table(vocab.len(), dim, seed);

    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::Format(format!(
                "{}:{}: expected {dim} values for `{token}`, found {}",
                path.display(),
                idx + 1,
                values.len()
            )));
        }
        if let Some(id) = vocab.id(token) {
            for (dst, raw) in table.row_mut(id).iter_mut().zip(values) {
                *dst = raw.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("`{raw}` is not a number"),
                })?;
            }
        }
    }
    Ok(table)
}

/// `rows × dim` table of uniform(-0.1, 0.1) draws with a zero padding row.
pub fn seeded_table(rows: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Array2::from_shape_fn((rows, dim), |_| rng.random_range(-0.1..0.1));
    table.row_mut(PAD_ID).fill(0.0);
    table
}

/// Writes `token v1 … vD` lines for the given rows.
pub fn write_word_vectors<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, Vec<f64>)>,
) -> Result<()> {
    let mut text = String::new();
    for (token, values) in rows {
        text.push_str(token);
        for v in values {
            let _ = write!(text, " {v}");
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_tokens(["open", "the", "door"])
    }

    #[test]
    fn known_tokens_map_to_ids() {
        let seq = tokenize("Open the door", &vocab()).unwrap();
        assert_eq!(seq.token_ids, vec![2, 3, 4]);
        assert_eq!(seq.len(), 3);
    }

    #[test]
    fn unknown_token_maps_to_unk() {
        assert_eq!(tokenize("zzzq", &vocab()).unwrap().token_ids, vec![UNK_ID]);
    }

    #[test]
    fn tokenize_is_deterministic() {
        let v = vocab();
        assert_eq!(tokenize("the door", &v).unwrap(), tokenize("the door", &v).unwrap());
    }

    #[test]
    fn empty_query_rejected() {
        assert!(matches!(tokenize("   ", &vocab()), Err(Error::Validation(_))));
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab().save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), vocab());
    }

    fn glove_file(dir: &Path, rows: &[(&str, f64)], dim: usize) -> std::path::PathBuf {
        let path = dir.join("glove.txt");
        write_word_vectors(
            &path,
            rows.iter().map(|(t, v)| (*t, vec![*v; dim])),
        )
        .unwrap();
        path
    }

    #[test]
    fn word_vectors_copy_known_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = glove_file(dir.path(), &[("a", 0.25), ("b", -1.0)], WORD_DIM);
        let v = Vocab::from_tokens(["a"]);
        let table = load_word_vectors(&path, &v, WORD_DIM, 5).unwrap();
        assert_eq!(table.dim(), (3, WORD_DIM));
        assert!(table.row(2).iter().all(|&x| x == 0.25));
        assert!(table.row(PAD_ID).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn missing_rows_are_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let path = glove_file(dir.path(), &[("x", 1.0), ("y", 2.0), ("z", 3.0)], WORD_DIM);
        let tokens: Vec<String> = (0..48).map(|i| format!("w{i}")).collect();
        let v = Vocab::from_tokens(&tokens);
        assert_eq!(v.len(), 50);
        let a = load_word_vectors(&path, &v, WORD_DIM, 11).unwrap();
        let b = load_word_vectors(&path, &v, WORD_DIM, 11).unwrap();
        assert_eq!(a.dim(), (50, 300));
        assert_eq!(a, b);
        assert!(a.row(5).iter().all(|x| x.abs() < 0.1));
        assert!(a.row(5).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn wrong_width_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = glove_file(dir.path(), &[("a", 1.0)], 7);
        let err = load_word_vectors(&path, &vocab(), WORD_DIM, 0).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
