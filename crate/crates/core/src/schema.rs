//! Relational schemas, schema-tag derivation, FK join graphs and content
//! snapshots.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TagLevel, TagVocab, COND, OTHER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("invalid schema json: {0}")]
    Json(String),
    #[error("no tables")]
    NoTables,
    #[error("duplicate table {0:?}")]
    DuplicateTable(String),
    #[error("table {table:?}: duplicate attribute {attribute:?}")]
    DuplicateAttribute { table: String, attribute: String },
    #[error("{table}.{attribute}: reference to unknown table {target:?}")]
    DanglingReference {
        table: String,
        attribute: String,
        target: String,
    },
    #[error("{table}.{attribute}: a reference table is required exactly when fk is set")]
    ReferenceWithoutFk { table: String, attribute: String },
    #[error("{table}.{attribute}: referenced table {target:?} has no primary key")]
    ReferencedWithoutKey {
        table: String,
        attribute: String,
        target: String,
    },
    #[error("snapshot for unknown table {0:?}")]
    UnknownTable(String),
    #[error("snapshot {table:?}: empty file, expected a header row")]
    EmptySnapshot { table: String },
    #[error("snapshot {table:?}: header mismatch, missing columns [{}], unexpected columns [{}]", .missing.join(", "), .unexpected.join(", "))]
    HeaderMismatch {
        table: String,
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("snapshot {table:?}, line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        table: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Text,
    Number,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Entity,
    Relation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(rename = "pk", default)]
    pub is_pk: bool,
    #[serde(rename = "fk", default)]
    pub is_fk: bool,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub ref_table: Option<String>,
    pub kind: AttributeKind,
}

impl Attribute {
    /// Neither primary nor foreign key: the attributes that get schema tags.
    pub fn is_plain(&self) -> bool {
        !self.is_pk && !self.is_fk
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub kind: TableKind,
    pub attributes: Vec<Attribute>,
}

impl Table {
    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn primary_key(&self) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.is_pk)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Schema {
    name: String,
    tables: Vec<Table>,
}

#[derive(Deserialize)]
struct RawSchema {
    name: String,
    tables: Vec<Table>,
}

impl Schema {
    pub fn new(name: impl Into<String>, tables: Vec<Table>) -> Result<Self, SchemaError> {
        if tables.is_empty() {
            return Err(SchemaError::NoTables);
        }
        let mut names = HashSet::new();
        for t in &tables {
            if !names.insert(t.name.as_str()) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut attrs = HashSet::new();
            for a in &t.attributes {
                if !attrs.insert(a.name.as_str()) {
                    return Err(SchemaError::DuplicateAttribute {
                        table: t.name.clone(),
                        attribute: a.name.clone(),
                    });
                }
            }
        }
        for t in &tables {
            for a in &t.attributes {
                match (&a.ref_table, a.is_fk) {
                    (None, false) => {}
                    (Some(target), true) => {
                        let Some(referenced) = tables.iter().find(|x| &x.name == target) else {
                            return Err(SchemaError::DanglingReference {
                                table: t.name.clone(),
                                attribute: a.name.clone(),
                                target: target.clone(),
                            });
                        };
                        if referenced.primary_key().is_none() {
                            return Err(SchemaError::ReferencedWithoutKey {
                                table: t.name.clone(),
                                attribute: a.name.clone(),
                                target: target.clone(),
                            });
                        }
                    }
                    _ => {
                        return Err(SchemaError::ReferenceWithoutFk {
                            table: t.name.clone(),
                            attribute: a.name.clone(),
                        })
                    }
                }
            }
        }
        Ok(Self {
            name: name.into(),
            tables,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Iterates `(table, attribute)` over every attribute.
    pub fn attributes(&self) -> impl Iterator<Item = (&Table, &Attribute)> {
        self.tables.iter().flat_map(|t| t.attributes.iter().map(move |a| (t, a)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

pub fn load_schema(text: &str) -> Result<Schema, SchemaError> {
    let raw: RawSchema = serde_json::from_str(text).map_err(|e| SchemaError::Json(e.to_string()))?;
    Schema::new(raw.name, raw.tables)
}

pub fn load_schema_file(path: &Path) -> Result<Schema, SchemaError> {
    load_schema(&read(path)?)
}

fn read(path: &Path) -> Result<String, SchemaError> {
    std::fs::read_to_string(path).map_err(|e| SchemaError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Table names, `table.attribute` for every plain attribute, `COND` and `O`.
pub fn derive_schema_tags(schema: &Schema) -> TagVocab {
    let tables = schema.tables.iter().map(|t| t.name.clone());
    let attrs = schema
        .attributes()
        .filter(|(_, a)| a.is_plain())
        .map(|(t, a)| format!("{}.{}", t.name, a.name));
    let fixed = [COND.to_string(), OTHER.to_string()];
    TagVocab::new(TagLevel::Schema, tables.chain(attrs).chain(fixed))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SchemaStats {
    pub entity_tables: usize,
    pub relation_tables: usize,
    pub total_tables: usize,
    pub total_attributes: usize,
    pub nonpk_fk_attributes: usize,
    pub derived_tags: usize,
    /// A tag count supplied by the caller, such as a published total.
    pub expected_tags: Option<usize>,
}

impl SchemaStats {
    pub fn warning(&self) -> Option<String> {
        match self.expected_tags {
            Some(expected) if expected != self.derived_tags => Some(format!(
                "derived tag count {} differs from expected {expected}",
                self.derived_tags
            )),
            _ => None,
        }
    }
}

impl fmt::Display for SchemaStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "entity tables\t{}", self.entity_tables)?;
        writeln!(f, "relation tables\t{}", self.relation_tables)?;
        writeln!(f, "total tables\t{}", self.total_tables)?;
        writeln!(f, "total attributes\t{}", self.total_attributes)?;
        writeln!(f, "nonPK-FK attributes\t{}", self.nonpk_fk_attributes)?;
        write!(f, "total tags\t{}", self.derived_tags)?;
        if let Some(expected) = self.expected_tags {
            write!(f, "\nexpected tags\t{expected}")?;
        }
        Ok(())
    }
}

pub fn schema_stats(schema: &Schema, expected_tags: Option<usize>) -> SchemaStats {
    let count = |kind| schema.tables.iter().filter(|t| t.kind == kind).count();
    SchemaStats {
        entity_tables: count(TableKind::Entity),
        relation_tables: count(TableKind::Relation),
        total_tables: schema.tables.len(),
        total_attributes: schema.attributes().count(),
        nonpk_fk_attributes: schema.attributes().filter(|(_, a)| a.is_plain()).count(),
        derived_tags: derive_schema_tags(schema).len(),
        expected_tags,
    }
}

/// One FK column: `from_table.from_attr` references `to_table.to_attr`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_attr: String,
    pub to_table: String,
    pub to_attr: String,
}

/// Undirected table graph with one logical edge per table pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemaGraph {
    nodes: Vec<String>,
    /// Keyed by the lexicographically ordered pair; every FK realizing it.
    edges: BTreeMap<(String, String), Vec<ForeignKey>>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl SchemaGraph {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn contains(&self, table: &str) -> bool {
        self.adjacency.contains_key(table)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.keys().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn has_edge(&self, u: &str, v: &str) -> bool {
        self.edges.contains_key(&ordered(u, v))
    }

    /// Number of FK columns behind the edge, 0 when absent.
    pub fn multiplicity(&self, u: &str, v: &str) -> usize {
        self.links(u, v).len()
    }

    /// FK columns behind the edge in sorted order.
    pub fn links(&self, u: &str, v: &str) -> &[ForeignKey] {
        self.edges.get(&ordered(u, v)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Neighbours in lexicographic order.
    pub fn neighbors(&self, table: &str) -> impl Iterator<Item = &str> {
        self.adjacency.get(table).into_iter().flatten().map(String::as_str)
    }
}

fn ordered(u: &str, v: &str) -> (String, String) {
    if u <= v {
        (u.to_string(), v.to_string())
    } else {
        (v.to_string(), u.to_string())
    }
}

/// Self-referencing FKs are dropped since the graph has no self-loops.
pub fn build_schema_graph(schema: &Schema) -> SchemaGraph {
    let mut nodes: Vec<String> = schema.tables.iter().map(|t| t.name.clone()).collect();
    nodes.sort();
    let mut adjacency: BTreeMap<String, BTreeSet<String>> = nodes.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
    let mut edges: BTreeMap<(String, String), Vec<ForeignKey>> = BTreeMap::new();
    for (t, a) in schema.attributes() {
        let Some(target) = &a.ref_table else { continue };
        if target == &t.name {
            continue;
        }
        let to_attr = schema
            .table(target)
            .and_then(Table::primary_key)
            .map(|k| k.name.clone())
            .expect("validated schema: referenced table has a key");
        edges.entry(ordered(&t.name, target)).or_default().push(ForeignKey {
            from_table: t.name.clone(),
            from_attr: a.name.clone(),
            to_table: target.clone(),
            to_attr,
        });
        adjacency.get_mut(&t.name).expect("node").insert(target.clone());
        adjacency.get_mut(target).expect("node").insert(t.name.clone());
    }
    for links in edges.values_mut() {
        links.sort();
    }
    SchemaGraph { nodes, edges, adjacency }
}

/// Columnar string storage: one buffer and offset list per column.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Column {
    buffer: String,
    ends: Vec<usize>,
}

impl Column {
    fn push(&mut self, value: &str) {
        self.buffer.push_str(value);
        self.ends.push(self.buffer.len());
    }

    fn get(&self, row: usize) -> Option<&str> {
        let end = *self.ends.get(row)?;
        let start = if row == 0 { 0 } else { self.ends[row - 1] };
        Some(&self.buffer[start..end])
    }

    fn bytes(&self) -> usize {
        self.buffer.capacity() + self.ends.capacity() * std::mem::size_of::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableRows {
    /// Attribute names in schema order.
    columns: Vec<String>,
    data: Vec<Column>,
    rows: usize,
}

impl TableRows {
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn value(&self, row: usize, column: &str) -> Option<&str> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.data[c].get(row)
    }

    pub fn column(&self, column: &str) -> Option<impl Iterator<Item = &str>> {
        let c = self.columns.iter().position(|x| x == column)?;
        let col = &self.data[c];
        Some((0..self.rows).map(move |r| col.get(r).expect("row in range")))
    }

    pub fn row(&self, row: usize) -> Option<Vec<(&str, &str)>> {
        (row < self.rows).then(|| {
            self.columns
                .iter()
                .zip(&self.data)
                .map(|(name, col)| (name.as_str(), col.get(row).expect("row in range")))
                .collect()
        })
    }
}

/// Raw string values for each table; tables without a file have no rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentSnapshot {
    tables: BTreeMap<String, TableRows>,
}

impl ContentSnapshot {
    pub fn table(&self, name: &str) -> Option<&TableRows> {
        self.tables.get(name)
    }

    pub fn row_count(&self, table: &str) -> Option<usize> {
        self.tables.get(table).map(TableRows::row_count)
    }

    pub fn total_rows(&self) -> usize {
        self.tables.values().map(TableRows::row_count).sum()
    }

    pub fn tables(&self) -> impl Iterator<Item = (&str, &TableRows)> {
        self.tables.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Heap bytes held by the stored values and offsets.
    pub fn memory_bytes(&self) -> usize {
        self.tables.values().flat_map(|t| &t.data).map(Column::bytes).sum()
    }
}

/// Builds a snapshot from `(table name, tsv text)` pairs. Header columns may
/// appear in any order but must be exactly the table's attributes.
pub fn load_snapshot<'a, I>(schema: &Schema, streams: I) -> Result<ContentSnapshot, SchemaError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut tables: BTreeMap<String, TableRows> = schema
        .tables
        .iter()
        .map(|t| {
            let columns: Vec<String> = t.attributes.iter().map(|a| a.name.clone()).collect();
            let data = vec![Column::default(); columns.len()];
            (t.name.clone(), TableRows { columns, data, rows: 0 })
        })
        .collect();
    for (name, text) in streams {
        let rows = tables.get_mut(name).ok_or_else(|| SchemaError::UnknownTable(name.to_string()))?;
        fill_table(name, text, rows)?;
    }
    Ok(ContentSnapshot { tables })
}

fn fill_table(name: &str, text: &str, rows: &mut TableRows) -> Result<(), SchemaError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) if !h.is_empty() => h.split('\t').collect(),
        _ => return Err(SchemaError::EmptySnapshot { table: name.to_string() }),
    };
    let missing: Vec<String> = rows.columns.iter().filter(|c| !header.contains(&c.as_str())).cloned().collect();
    let mut seen = HashSet::new();
    let unexpected: Vec<String> = header
        .iter()
        .filter(|h| !rows.columns.iter().any(|c| c == *h) || !seen.insert(**h))
        .map(|h| h.to_string())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(SchemaError::HeaderMismatch {
            table: name.to_string(),
            missing,
            unexpected,
        });
    }
    // position in the file of each schema column
    let source: Vec<usize> = rows
        .columns
        .iter()
        .map(|c| header.iter().position(|h| h == c).expect("checked"))
        .collect();
    let mut fields = Vec::with_capacity(header.len());
    for (line, l) in lines {
        if l.is_empty() {
            continue;
        }
        fields.clear();
        fields.extend(l.split('\t'));
        if fields.len() != header.len() {
            return Err(SchemaError::RaggedRow {
                table: name.to_string(),
                line,
                expected: header.len(),
                found: fields.len(),
            });
        }
        for (col, &src) in rows.data.iter_mut().zip(&source) {
            col.push(fields[src]);
        }
        rows.rows += 1;
    }
    Ok(())
}

/// Reads `<dir>/<table>.tsv` for every table that has a file.
pub fn load_snapshot_dir(schema: &Schema, dir: &Path) -> Result<ContentSnapshot, SchemaError> {
    let mut texts = Vec::new();
    for t in &schema.tables {
        let path = dir.join(format!("{}.tsv", t.name));
        if path.exists() {
            texts.push((t.name.as_str(), read(&path)?));
        }
    }
    load_snapshot(schema, texts.iter().map(|(n, s)| (*n, s.as_str())))
}
