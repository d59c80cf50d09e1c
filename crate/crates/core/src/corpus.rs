//! Annotated query logs: one token per line with POS, type and schema tags.
//!
//! ```text
//! # comment
//! who     WP      O         O
//! acted   VBD     TABLEREF  cast
//! ...
//! <blank line ends the query>
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("no queries")]
    NoQueries,
    #[error("line {line}: expected 4 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}, column {column}: empty field")]
    EmptyField { line: usize, column: usize },
    #[error("line {line}, column 1: token {token:?} contains whitespace")]
    WhitespaceInToken { line: usize, token: String },
    #[error("line {line}, column 3: unknown type tag {tag:?}")]
    UnknownTypeTag { line: usize, tag: String },
    #[error("line {line}: type tag {type_tag} cannot pair with schema tag {schema_tag:?}")]
    InconsistentTags {
        line: usize,
        type_tag: TypeTag,
        schema_tag: String,
    },
    #[error("line {line}, column 4: VALUE token needs a qualified attribute, got {schema_tag:?}")]
    UnqualifiedValue { line: usize, schema_tag: String },
    #[error("query {query}, token {token}: schema tag {tag:?} is not in the vocabulary")]
    UnknownSchemaTag { query: usize, token: usize, tag: String },
    #[error("need at least {needed} queries, have {have}")]
    TooFewQueries { needed: usize, have: usize },
    #[error("fold count must be at least 2, got {0}")]
    FoldCount(usize),
}

/// The seven coarse mapping categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeTag {
    Table,
    TableRef,
    Attr,
    AttrRef,
    Value,
    Cond,
    Other,
}

impl TypeTag {
    pub const ALL: [TypeTag; 7] = [
        TypeTag::Table,
        TypeTag::TableRef,
        TypeTag::Attr,
        TypeTag::AttrRef,
        TypeTag::Value,
        TypeTag::Cond,
        TypeTag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TypeTag::Table => "TABLE",
            TypeTag::TableRef => "TABLEREF",
            TypeTag::Attr => "ATTR",
            TypeTag::AttrRef => "ATTRREF",
            TypeTag::Value => "VALUE",
            TypeTag::Cond => "COND",
            TypeTag::Other => "O",
        }
    }

    /// Table or attribute names, as opposed to cell values.
    pub fn is_relation(self) -> bool {
        matches!(self, TypeTag::Table | TypeTag::TableRef | TypeTag::Attr | TypeTag::AttrRef)
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TypeTag {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TypeTag::ALL.into_iter().find(|t| t.as_str() == s).ok_or(())
    }
}

pub const COND: &str = "COND";
pub const OTHER: &str = "O";

/// Spells `cond`/`o` in any case as `COND`/`O`; everything else is kept.
pub fn canonical_schema_tag(tag: &str) -> String {
    if tag.eq_ignore_ascii_case(COND) {
        COND.to_string()
    } else if tag.eq_ignore_ascii_case(OTHER) {
        OTHER.to_string()
    } else {
        tag.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub pos: String,
    pub type_tag: TypeTag,
    pub schema_tag: String,
}

impl Token {
    /// Validates the tag pairing rules; `line` is only used for diagnostics.
    pub fn new(text: &str, pos: &str, type_tag: TypeTag, schema_tag: &str, line: usize) -> Result<Self, CorpusError> {
        if text.chars().any(char::is_whitespace) {
            return Err(CorpusError::WhitespaceInToken {
                line,
                token: text.to_string(),
            });
        }
        for (column, field) in [(1, text), (2, pos), (4, schema_tag)] {
            if field.is_empty() {
                return Err(CorpusError::EmptyField { line, column });
            }
        }
        let schema_tag = canonical_schema_tag(schema_tag);
        let paired = match type_tag {
            TypeTag::Other => schema_tag == OTHER,
            TypeTag::Cond => schema_tag == COND,
            _ => schema_tag != OTHER && schema_tag != COND,
        };
        if !paired {
            return Err(CorpusError::InconsistentTags {
                line,
                type_tag,
                schema_tag,
            });
        }
        if type_tag == TypeTag::Value && !schema_tag.contains('.') {
            return Err(CorpusError::UnqualifiedValue { line, schema_tag });
        }
        Ok(Self {
            text: text.to_string(),
            pos: pos.to_string(),
            type_tag,
            schema_tag,
        })
    }

    pub fn tag(&self, level: TagLevel) -> &str {
        match level {
            TagLevel::Pos => &self.pos,
            TagLevel::Type => self.type_tag.as_str(),
            TagLevel::Schema => &self.schema_tag,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedQuery {
    tokens: Vec<Token>,
}

impl AnnotatedQuery {
    pub fn new(tokens: Vec<Token>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::NoQueries);
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }

    pub fn tags(&self, level: TagLevel) -> Vec<&str> {
        self.tokens.iter().map(|t| t.tag(level)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    queries: Vec<AnnotatedQuery>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, queries: Vec<AnnotatedQuery>) -> Result<Self, CorpusError> {
        if queries.is_empty() {
            return Err(CorpusError::NoQueries);
        }
        Ok(Self {
            name: name.into(),
            queries,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn queries(&self) -> &[AnnotatedQuery] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.queries.iter().map(AnnotatedQuery::len).sum()
    }

    fn subset(&self, suffix: &str, indices: &[usize]) -> Dataset {
        Dataset {
            name: format!("{}/{suffix}", self.name),
            queries: indices.iter().map(|&i| self.queries[i].clone()).collect(),
        }
    }

    /// Checks every schema tag against a schema-derived vocabulary.
    pub fn check_schema_tags(&self, vocab: &TagVocab) -> Result<(), CorpusError> {
        for (qi, q) in self.queries.iter().enumerate() {
            for (ti, t) in q.tokens.iter().enumerate() {
                if vocab.index_of(&t.schema_tag).is_none() {
                    return Err(CorpusError::UnknownSchemaTag {
                        query: qi,
                        token: ti,
                        tag: t.schema_tag.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Serializes in the corpus format; comments are not preserved.
    pub fn to_corpus_string(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            for t in &q.tokens {
                out.push_str(&t.text);
                out.push('\t');
                out.push_str(&t.pos);
                out.push('\t');
                out.push_str(t.type_tag.as_str());
                out.push('\t');
                out.push_str(&t.schema_tag);
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the tab-separated corpus format.
pub fn parse_corpus(name: &str, text: &str) -> Result<Dataset, CorpusError> {
    let mut queries = Vec::new();
    let mut current = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.starts_with('#') {
            continue;
        }
        if raw.trim().is_empty() {
            if !current.is_empty() {
                queries.push(AnnotatedQuery {
                    tokens: std::mem::take(&mut current),
                });
            }
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::ColumnCount {
                line,
                found: fields.len(),
            });
        }
        if fields[2].is_empty() {
            return Err(CorpusError::EmptyField { line, column: 3 });
        }
        let type_tag = fields[2].parse::<TypeTag>().map_err(|_| CorpusError::UnknownTypeTag {
            line,
            tag: fields[2].to_string(),
        })?;
        current.push(Token::new(fields[0], fields[1], type_tag, fields[3], line)?);
    }
    if !current.is_empty() {
        queries.push(AnnotatedQuery { tokens: current });
    }
    Dataset::new(name, queries)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TagLevel {
    Pos,
    Type,
    Schema,
}

impl TagLevel {
    pub const ALL: [TagLevel; 3] = [TagLevel::Pos, TagLevel::Type, TagLevel::Schema];

    pub fn as_str(self) -> &'static str {
        match self {
            TagLevel::Pos => "POS",
            TagLevel::Type => "TYPE",
            TagLevel::Schema => "SCHEMA",
        }
    }
}

/// Dense indices `0..k` over tag symbols. `START = k` and `STOP = k + 1` are
/// reserved for the CRF and never appear in `symbols`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagVocab {
    level: TagLevel,
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagVocab {
    /// Symbols are sorted and deduplicated.
    pub fn new<I, S>(level: TagLevel, symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = symbols.into_iter().map(Into::into).collect();
        let symbols: Vec<String> = set.into_iter().collect();
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { level, symbols, index }
    }

    pub fn level(&self) -> TagLevel {
        self.level
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Number of real tags `k`.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn start(&self) -> usize {
        self.symbols.len()
    }

    pub fn stop(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }
}

pub fn build_tag_vocab(dataset: &Dataset, level: TagLevel) -> TagVocab {
    TagVocab::new(
        level,
        dataset.queries.iter().flat_map(|q| q.tokens.iter().map(move |t| t.tag(level).to_string())),
    )
}

#[derive(Clone, Debug)]
pub struct Fold {
    pub train: Dataset,
    pub test: Dataset,
    /// Positions of the test queries in the source dataset, ascending.
    pub test_indices: Vec<usize>,
}

/// Shuffles query positions with a seeded permutation and deals them
/// round-robin into `k` test folds.
pub fn split_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>, CorpusError> {
    if k < 2 {
        return Err(CorpusError::FoldCount(k));
    }
    if dataset.len() < k {
        return Err(CorpusError::TooFewQueries {
            needed: k,
            have: dataset.len(),
        });
    }
    let order = permutation(dataset.len(), seed);
    let mut buckets = vec![Vec::new(); k];
    for (pos, &qi) in order.iter().enumerate() {
        buckets[pos % k].push(qi);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(f, mut test)| {
            test.sort_unstable();
            let train: Vec<usize> = (0..dataset.len()).filter(|i| test.binary_search(i).is_err()).collect();
            Fold {
                train: dataset.subset(&format!("fold{f}-train"), &train),
                test: dataset.subset(&format!("fold{f}-test"), &test),
                test_indices: test,
            }
        })
        .collect())
}

/// Holds out `round(n / 6)` queries for validation.
pub fn train_val_split(dataset: &Dataset, seed: u64) -> Result<(Dataset, Dataset), CorpusError> {
    if dataset.len() < 6 {
        return Err(CorpusError::TooFewQueries {
            needed: 6,
            have: dataset.len(),
        });
    }
    let n_val = (dataset.len() as f64 / 6.0).round() as usize;
    let order = permutation(dataset.len(), seed);
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut train: Vec<usize> = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((dataset.subset("train", &train), dataset.subset("val", &val)))
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}
