//! Frozen word vectors with a hashed character n-gram fallback.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::Matrix;

pub const DEFAULT_BUCKETS: u64 = 1 << 21;
pub const MIN_NGRAM: usize = 3;
pub const MAX_NGRAM: usize = 6;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("no vectors")]
    Empty,
    #[error("line {line}: expected {expected} components, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}, field {field}: {text:?} is not a number")]
    Number { line: usize, field: usize, text: String },
    #[error("line {line}: malformed subword header {text:?}")]
    SubwordHeader { line: usize, text: String },
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("bucket count must be positive")]
    ZeroBuckets,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Where a token's vector came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Exact,
    Lowercase,
    Subword,
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    buckets: u64,
    seed: u64,
    index: HashMap<String, usize>,
    words: Vec<String>,
    /// Row-major `words.len() x dim`.
    vectors: Vec<f64>,
    /// Bucket -> mean of the vectors of vocabulary words containing it.
    bucket_means: HashMap<u64, Vec<f64>>,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` pairs; the first occurrence of a
    /// word wins.
    pub fn new<I>(dim: usize, entries: I, buckets: u64, seed: u64) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        if buckets == 0 {
            return Err(EmbeddingError::ZeroBuckets);
        }
        let mut index = HashMap::new();
        let mut words = Vec::new();
        let mut vectors = Vec::new();
        for (i, (word, v)) in entries.into_iter().enumerate() {
            if v.len() != dim {
                return Err(EmbeddingError::Dimension {
                    line: i + 1,
                    expected: dim,
                    found: v.len(),
                });
            }
            if index.contains_key(&word) {
                continue;
            }
            index.insert(word.clone(), words.len());
            words.push(word);
            vectors.extend(v);
        }
        if words.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        let mut table = Self {
            dim,
            buckets,
            seed,
            index,
            words,
            vectors,
            bucket_means: HashMap::new(),
        };
        table.bucket_means = table.accumulate_buckets();
        Ok(table)
    }

    fn accumulate_buckets(&self) -> HashMap<u64, Vec<f64>> {
        let mut sums: HashMap<u64, (Vec<f64>, usize)> = HashMap::new();
        for (w, word) in self.words.iter().enumerate() {
            let v = self.row(w);
            let mut own = self.bucket_ids(word);
            own.sort_unstable();
            own.dedup();
            for b in own {
                let (sum, count) = sums.entry(b).or_insert_with(|| (vec![0.0; self.dim], 0));
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                *count += 1;
            }
        }
        sums.into_iter()
            .map(|(b, (mut sum, count))| {
                sum.iter_mut().for_each(|s| *s /= count as f64);
                (b, sum)
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn buckets(&self) -> u64 {
        self.buckets
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.row(i))
    }

    /// Bucket ids of the n-grams of `<token>`, lowercased, in enumeration
    /// order (duplicates kept).
    pub fn bucket_ids(&self, token: &str) -> Vec<u64> {
        char_ngrams(&token.to_lowercase())
            .iter()
            .map(|g| fnv1a(g.as_bytes(), self.seed) % self.buckets)
            .collect()
    }

    /// Vector of one hash bucket.
    pub fn bucket_vector(&self, bucket: u64) -> Vec<f64> {
        if let Some(v) = self.bucket_means.get(&bucket) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ bucket);
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
    }

    pub fn lookup(&self, token: &str) -> (Vec<f64>, Lookup) {
        if let Some(v) = self.get(token) {
            return (v.to_vec(), Lookup::Exact);
        }
        if let Some(v) = self.get(&token.to_lowercase()) {
            return (v.to_vec(), Lookup::Lowercase);
        }
        let ids = self.bucket_ids(token);
        let mut mean = vec![0.0; self.dim];
        for &b in &ids {
            mean.iter_mut().zip(self.bucket_vector(b)).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= ids.len() as f64);
        (mean, Lookup::Subword)
    }

    /// Exact match, then lowercase match, then mean of n-gram buckets.
    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        self.lookup(token).0
    }

    /// `n x d` matrix whose row `i` embeds `tokens[i]`.
    pub fn embed_query<S: AsRef<str>>(&self, tokens: &[S]) -> Matrix {
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            data.extend(self.embed_token(t.as_ref()));
        }
        Matrix::new(tokens.len(), self.dim, data).expect("rows have dimension d")
    }

    /// Heap bytes of stored vectors and bucket means.
    pub fn memory_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        self.vectors.capacity() * f
            + self.bucket_means.len() * (self.dim * f + 2 * std::mem::size_of::<u64>())
            + self.words.iter().map(|w| 2 * w.capacity()).sum::<usize>()
    }
}

/// All character n-grams (3 to 6 chars) of the token wrapped in `<` `>`.
pub fn char_ngrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = format!("<{token}>").chars().collect();
    let mut out = Vec::new();
    for n in MIN_NGRAM..=MAX_NGRAM {
        if n > chars.len() {
            break;
        }
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// FNV-1a 64 with the offset basis xor-ed with `seed`.
pub fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Parses `token v1 .. vd` lines with optional `count dim` and
/// `#subword B=<buckets> seed=<u64>` header lines.
pub fn load_embeddings(text: &str, expected_dim: Option<usize>) -> Result<EmbeddingTable, EmbeddingError> {
    let mut buckets = DEFAULT_BUCKETS;
    let mut seed = 0u64;
    let mut dim = expected_dim;
    let mut entries = Vec::new();
    let mut first_content = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end();
        if raw.is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix("#subword") {
            (buckets, seed) = parse_subword_header(rest).ok_or_else(|| EmbeddingError::SubwordHeader {
                line,
                text: raw.to_string(),
            })?;
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if first_content {
            first_content = false;
            if let [count, d] = fields[..] {
                if let (Ok(_), Ok(d)) = (count.parse::<usize>(), d.parse::<usize>()) {
                    match dim {
                        Some(e) if e != d => {
                            return Err(EmbeddingError::Dimension {
                                line,
                                expected: e,
                                found: d,
                            })
                        }
                        _ => dim = Some(d),
                    }
                    continue;
                }
            }
        }
        let found = fields.len() - 1;
        let d = *dim.get_or_insert(found);
        if found != d {
            return Err(EmbeddingError::Dimension { line, expected: d, found });
        }
        let v = fields[1..]
            .iter()
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>().map_err(|_| EmbeddingError::Number {
                    line,
                    field: j + 2,
                    text: f.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        entries.push((fields[0].to_string(), v));
    }
    if entries.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    EmbeddingTable::new(dim.expect("set by first vector"), entries, buckets, seed)
}

fn parse_subword_header(rest: &str) -> Option<(u64, u64)> {
    let mut buckets = None;
    let mut seed = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=')? {
            ("B", v) => buckets = Some(v.parse().ok()?),
            ("seed", v) => seed = Some(v.parse().ok()?),
            _ => return None,
        }
    }
    Some((buckets.unwrap_or(DEFAULT_BUCKETS), seed.unwrap_or(0)))
}

pub fn load_embeddings_file(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable, EmbeddingError> {
    let text = std::fs::read_to_string(path).map_err(|e| EmbeddingError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_embeddings(&text, expected_dim)
}
