//! Unsupervised keyword mappers: tf-idf over an inverted n-gram value
//! index, edit-distance and embedding-similarity relation matching, and a
//! row-limited scan over snapshot values.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::embeddings::EmbeddingTable;
use crate::schema::{AttributeKind, ContentSnapshot, Schema};

pub const MAX_NGRAM: usize = 3;
pub const DEFAULT_ROW_LIMIT: usize = 2000;
pub const INDEX_MAGIC: &[u8; 5] = b"DBIX1";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("similarity threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("index file: {0}")]
    IndexFile(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Relation,
    Value,
}

/// A mapped token span `start..end` (exclusive end).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MappingResult {
    pub start: usize,
    pub end: usize,
    /// A table name or `table.attribute`.
    pub target: String,
    pub kind: MatchKind,
    pub score: f64,
}

/// Lowercases, drops characters that are neither alphanumeric nor
/// whitespace, and collapses whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// All contiguous word n-grams of length `1..=max_n`.
pub fn word_ngrams(words: &[&str], max_n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 1..=max_n.min(words.len()) {
        for w in words.windows(n) {
            out.push(w.join(" "));
        }
    }
    out
}

fn text_columns(schema: &Schema) -> Vec<(String, String)> {
    schema
        .tables()
        .iter()
        .flat_map(|t| {
            t.attributes
                .iter()
                .filter(|a| a.kind == AttributeKind::Text)
                .map(move |a| (t.name.clone(), a.name.clone()))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Posting {
    /// Index into [`InvertedValueIndex::columns`].
    pub column: u32,
    pub tf: u32,
}

/// Normalized phrase -> columns containing it with term frequencies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvertedValueIndex {
    columns: Vec<String>,
    postings: HashMap<String, Vec<Posting>>,
}

impl InvertedValueIndex {
    /// Qualified `table.attribute` names of the indexed text columns.
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    /// Postings sorted by column index.
    pub fn postings(&self, phrase: &str) -> &[Posting] {
        self.postings.get(phrase).map_or(&[], Vec::as_slice)
    }

    pub fn tf(&self, phrase: &str, column: &str) -> u32 {
        let Some(c) = self.columns.iter().position(|x| x == column) else {
            return 0;
        };
        self.postings(phrase).iter().find(|p| p.column as usize == c).map_or(0, |p| p.tf)
    }

    /// Number of columns containing `phrase`.
    pub fn df(&self, phrase: &str) -> usize {
        self.postings(phrase).len()
    }

    /// `tf * ln((1 + C) / (1 + df))` with `C` indexed columns.
    pub fn tfidf(&self, tf: u32, df: usize) -> f64 {
        tf as f64 * ((1.0 + self.columns.len() as f64) / (1.0 + df as f64)).ln()
    }

    /// Bytes of phrase text and postings.
    pub fn memory_bytes(&self) -> usize {
        self.postings
            .iter()
            .map(|(k, v)| k.len() + std::mem::size_of::<String>() + v.len() * std::mem::size_of::<Posting>() + std::mem::size_of::<Vec<Posting>>())
            .sum::<usize>()
            + self.columns.iter().map(String::len).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        let put = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
        put(&mut out, self.columns.len() as u64);
        for c in &self.columns {
            put(&mut out, c.len() as u64);
            out.extend_from_slice(c.as_bytes());
        }
        let mut phrases: Vec<&String> = self.postings.keys().collect();
        phrases.sort();
        put(&mut out, phrases.len() as u64);
        for p in phrases {
            put(&mut out, p.len() as u64);
            out.extend_from_slice(p.as_bytes());
            let list = &self.postings[p];
            put(&mut out, list.len() as u64);
            for post in list {
                put(&mut out, u64::from(post.column));
                put(&mut out, u64::from(post.tf));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BaselineError> {
        let err = |m: &str| BaselineError::IndexFile(m.to_string());
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(INDEX_MAGIC.len())? != INDEX_MAGIC {
            return Err(err("bad magic"));
        }
        if u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes")) != INDEX_VERSION {
            return Err(err("unsupported version"));
        }
        let ncols = c.u64()? as usize;
        let columns = (0..ncols).map(|_| c.string()).collect::<Result<Vec<_>, _>>()?;
        let nphrases = c.u64()? as usize;
        let mut postings = HashMap::with_capacity(nphrases.min(bytes.len()));
        for _ in 0..nphrases {
            let phrase = c.string()?;
            let n = c.u64()? as usize;
            let mut list = Vec::with_capacity(n.min(ncols));
            for _ in 0..n {
                let column = c.u64()?;
                let tf = c.u64()?;
                if column >= ncols as u64 || tf == 0 || tf > u64::from(u32::MAX) {
                    return Err(err("invalid posting"));
                }
                list.push(Posting {
                    column: column as u32,
                    tf: tf as u32,
                });
            }
            postings.insert(phrase, list);
        }
        if c.pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(Self { columns, postings })
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| io_error(path, e))?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BaselineError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| BaselineError::IndexFile("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, BaselineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, BaselineError> {
        let n = usize::try_from(self.u64()?).map_err(|_| BaselineError::IndexFile("size overflow".into()))?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| BaselineError::IndexFile("invalid utf-8".into()))
    }
}

fn io_error(path: &Path, e: std::io::Error) -> BaselineError {
    BaselineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Indexes every word n-gram (`n <= 3`) of every normalized text value.
/// `tf` counts occurrences within a column; `df` counts columns.
pub fn build_value_index(snapshot: &ContentSnapshot, schema: &Schema) -> InvertedValueIndex {
    let cols = text_columns(schema);
    let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
    for (ci, (table, attr)) in cols.iter().enumerate() {
        let Some(values) = snapshot.table(table).and_then(|t| t.column(attr)) else {
            continue;
        };
        let mut counts: HashMap<String, u32> = HashMap::new();
        for v in values {
            let norm = normalize(v);
            let words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
            for g in word_ngrams(&words, MAX_NGRAM) {
                *counts.entry(g).or_default() += 1;
            }
        }
        for (phrase, tf) in counts {
            postings.entry(phrase).or_default().push(Posting { column: ci as u32, tf });
        }
    }
    InvertedValueIndex {
        columns: cols.into_iter().map(|(t, a)| format!("{t}.{a}")).collect(),
        postings,
    }
}

/// Spans `start..start+n` for `n = 3..1`, left to right within each length.
fn spans_longest_first(len: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..=MAX_NGRAM.min(len)).rev().flat_map(move |n| (0..=len - n).map(move |s| (s, s + n)))
}

/// Runs `lookup` on query spans longest first, skipping spans that overlap
/// an accepted one. Results are sorted by start.
fn resolve_spans<F>(tokens: &[String], mut lookup: F) -> Vec<MappingResult>
where
    F: FnMut(&str) -> Option<(String, f64)>,
{
    let mut used = vec![false; tokens.len()];
    let mut out = Vec::new();
    for (s, e) in spans_longest_first(tokens.len()) {
        if used[s..e].iter().any(|&u| u) || tokens[s..e].iter().any(String::is_empty) {
            continue;
        }
        let phrase = tokens[s..e].join(" ");
        if let Some((target, score)) = lookup(&phrase) {
            used[s..e].iter_mut().for_each(|u| *u = true);
            out.push(MappingResult {
                start: s,
                end: e,
                target,
                kind: MatchKind::Value,
                score,
            });
        }
    }
    out.sort_by_key(|m| m.start);
    out
}

/// Exact n-gram lookups, longest first. A phrase found in several columns
/// goes to the column with the largest tf, ties to the smaller name.
pub fn tfidf_map<S: AsRef<str>>(index: &InvertedValueIndex, tokens: &[S]) -> Vec<MappingResult> {
    let norm: Vec<String> = tokens.iter().map(|t| normalize(t.as_ref())).collect();
    resolve_spans(&norm, |phrase| {
        let list = index.postings(phrase);
        let best = list.iter().min_by(|a, b| {
            b.tf.cmp(&a.tf)
                .then_with(|| index.columns[a.column as usize].cmp(&index.columns[b.column as usize]))
        })?;
        Some((index.columns[best.column as usize].clone(), index.tfidf(best.tf, list.len())))
    })
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn relation_key(name: &str) -> String {
    name.to_lowercase().replace('_', " ")
}

/// Table and attribute names as `(compared name, target)`.
fn relation_candidates(schema: &Schema) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for t in schema.tables() {
        out.push((relation_key(&t.name), t.name.clone()));
        for a in &t.attributes {
            out.push((relation_key(&a.name), format!("{}.{}", t.name, a.name)));
        }
    }
    out
}

/// Closest table or attribute name within `max_distance`. Names are
/// compared lowercased with underscores read as spaces; ties go to the
/// shorter name, then the smaller target. The score is the distance and
/// the span is `0..1`.
pub fn edit_distance_relation_map(token: &str, schema: &Schema, max_distance: usize) -> Option<MappingResult> {
    let key = relation_key(token);
    relation_candidates(schema)
        .into_iter()
        .map(|(name, target)| (levenshtein(&key, &name), name.chars().count(), target))
        .filter(|(d, _, _)| *d <= max_distance)
        .min()
        .map(|(d, _, target)| MappingResult {
            start: 0,
            end: 1,
            target,
            kind: MatchKind::Relation,
            score: d as f64,
        })
}

/// [`edit_distance_relation_map`] on every token of a query.
pub fn edit_distance_map<S: AsRef<str>>(tokens: &[S], schema: &Schema, max_distance: usize) -> Vec<MappingResult> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.as_ref().is_empty())
        .filter_map(|(i, t)| {
            edit_distance_relation_map(t.as_ref(), schema, max_distance).map(|m| MappingResult {
                start: i,
                end: i + 1,
                ..m
            })
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean of the word vectors of a candidate, split on whitespace, `_`
/// and `.`.
pub fn phrase_vector(table: &EmbeddingTable, phrase: &str) -> Vec<f64> {
    let words: Vec<&str> = phrase.split(|c: char| c.is_whitespace() || c == '_' || c == '.').filter(|w| !w.is_empty()).collect();
    let mut mean = vec![0.0; table.dim()];
    for w in &words {
        for (m, v) in mean.iter_mut().zip(table.embed_token(w)) {
            *m += v;
        }
    }
    if !words.is_empty() {
        mean.iter_mut().for_each(|m| *m /= words.len() as f64);
    }
    mean
}

/// The candidate most cosine-similar to `token`, if at least `tau`. Ties
/// go to the smaller candidate. The score is the similarity.
pub fn embedding_similarity_map<S: AsRef<str>>(
    table: &EmbeddingTable,
    token: &str,
    candidates: &[S],
    tau: f64,
) -> Result<Option<MappingResult>, BaselineError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(BaselineError::Threshold(tau));
    }
    let tv = table.embed_token(token);
    let mut best: Option<(f64, &str)> = None;
    for c in candidates {
        let c = c.as_ref();
        let sim = cosine(&tv, &phrase_vector(table, c));
        let better = match best {
            None => true,
            Some((s, name)) => sim > s || (sim == s && c < name),
        };
        if better {
            best = Some((sim, c));
        }
    }
    // Rounding can leave an identical vector a hair below 1.
    const SLACK: f64 = 1e-12;
    Ok(best.filter(|(s, _)| *s + SLACK >= tau).map(|(s, c)| MappingResult {
        start: 0,
        end: 1,
        target: c.to_string(),
        kind: MatchKind::Relation,
        score: s.min(1.0),
    }))
}

fn contains_ignore_ascii_case(hay: &str, needle: &[u8]) -> bool {
    let h = hay.as_bytes();
    if needle.is_empty() {
        return true;
    }
    h.len() >= needle.len() && h.windows(needle.len()).any(|w| w.eq_ignore_ascii_case(needle))
}

/// Counts rows of each text column whose value contains the phrase (ASCII
/// case-insensitive), stopping a column at `row_limit` hits. The column
/// with the most hits wins, ties to the smaller name.
pub fn scan_counts(snapshot: &ContentSnapshot, schema: &Schema, phrase: &str, row_limit: usize) -> Vec<(String, usize)> {
    let needle = phrase.to_ascii_lowercase();
    let mut out = Vec::new();
    for (table, attr) in text_columns(schema) {
        let Some(values) = snapshot.table(&table).and_then(|t| t.column(&attr)) else {
            continue;
        };
        let mut count = 0;
        for v in values {
            if contains_ignore_ascii_case(v, needle.as_bytes()) {
                count += 1;
                if count == row_limit {
                    break;
                }
            }
        }
        out.push((format!("{table}.{attr}"), count));
    }
    out
}

/// Longest-first scan matching of query n-grams against snapshot values.
/// The score is the capped row count of the winning column.
pub fn scan_map<S: AsRef<str>>(snapshot: &ContentSnapshot, schema: &Schema, tokens: &[S], row_limit: usize) -> Vec<MappingResult> {
    let words: Vec<String> = tokens.iter().map(|t| t.as_ref().trim().to_string()).collect();
    resolve_spans(&words, |phrase| {
        scan_counts(snapshot, schema, phrase, row_limit)
            .into_iter()
            .filter(|(_, c)| *c > 0)
            .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
            .map(|(col, c)| (col, c as f64))
    })
}
