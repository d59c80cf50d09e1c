//! Join-path inference over the schema graph and SQL skeleton rendering.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::TypeTag;
use crate::schema::{ForeignKey, Schema, SchemaGraph, TableKind};
use crate::tagger::{MappingKind, TaggedQuery};

/// Printed when no join path covers the mapped tables.
pub const INACCURATE: &str = "INACCURATE: no join path";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranslateError {
    #[error("nothing was mapped")]
    EmptyMappings,
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("no join path")]
    NoJoinPath,
}

/// Schema elements mentioned by one query.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MappingSet {
    pub tables: BTreeSet<String>,
    /// Qualified `table.attribute` names.
    pub attributes: BTreeSet<String>,
    /// `(table.attribute, literal)` in query order.
    pub value_spans: Vec<(String, String)>,
    /// Surface text of COND tokens.
    pub conditions: Vec<String>,
}

impl MappingSet {
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty() && self.attributes.is_empty() && self.value_spans.is_empty()
    }

    /// Mapped tables plus the tables owning mapped attributes and values.
    pub fn required_tables(&self) -> BTreeSet<String> {
        let mut out = self.tables.clone();
        for a in self.attributes.iter().chain(self.value_spans.iter().map(|(a, _)| a)) {
            out.insert(owner(a).to_string());
        }
        out
    }

    /// Every table, attribute and value column must exist in `schema`.
    pub fn validate(&self, schema: &Schema) -> Result<(), TranslateError> {
        for t in &self.tables {
            if schema.table(t).is_none() {
                return Err(TranslateError::UnknownTable(t.clone()));
            }
        }
        for a in self.attributes.iter().chain(self.value_spans.iter().map(|(a, _)| a)) {
            let known = a
                .split_once('.')
                .and_then(|(t, n)| schema.table(t).and_then(|t| t.attribute(n)))
                .is_some();
            if !known {
                return Err(TranslateError::UnknownAttribute(a.clone()));
            }
        }
        Ok(())
    }
}

fn owner(qualified: &str) -> &str {
    qualified.split_once('.').map_or(qualified, |(t, _)| t)
}

/// Tables from TABLE/TABLEREF keywords, attributes from ATTR/ATTRREF,
/// merged VALUE runs as literals, and COND token texts.
pub fn mappings_from_tags(query: &TaggedQuery) -> MappingSet {
    let mut set = MappingSet::default();
    for m in &query.mappings {
        match m.kind {
            MappingKind::Table => {
                set.tables.insert(owner(&m.schema_tag).to_string());
            }
            MappingKind::Attribute => {
                if m.schema_tag.contains('.') {
                    set.attributes.insert(m.schema_tag.clone());
                } else {
                    set.tables.insert(m.schema_tag.clone());
                }
            }
            MappingKind::Value => {
                if m.schema_tag.contains('.') {
                    set.value_spans.push((m.schema_tag.clone(), m.text.clone()));
                } else {
                    set.tables.insert(m.schema_tag.clone());
                }
            }
        }
    }
    set.conditions = query.tokens.iter().filter(|t| t.type_tag == TypeTag::Cond).map(|t| t.text.clone()).collect();
    set
}

/// `parent` joins `table` through `fk`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JoinEdge {
    pub parent: String,
    pub table: String,
    pub from_table: String,
    pub from_attr: String,
    pub to_table: String,
    pub to_attr: String,
}

impl JoinEdge {
    fn new(parent: &str, table: &str, fk: &ForeignKey) -> Self {
        Self {
            parent: parent.to_string(),
            table: table.to_string(),
            from_table: fk.from_table.clone(),
            from_attr: fk.from_attr.clone(),
            to_table: fk.to_table.clone(),
            to_attr: fk.to_attr.clone(),
        }
    }
}

/// Tables in join order (root first) and one edge per later table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JoinPath {
    pub tables: Vec<String>,
    pub joins: Vec<JoinEdge>,
}

impl JoinPath {
    pub fn edge_count(&self) -> usize {
        self.joins.len()
    }
}

fn connected(graph: &SchemaGraph, nodes: &BTreeSet<&str>) -> bool {
    let Some(&first) = nodes.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([first]);
    let mut stack = vec![first];
    while let Some(u) = stack.pop() {
        for v in graph.neighbors(u) {
            if nodes.contains(v) && seen.insert(v) {
                stack.push(v);
            }
        }
    }
    seen.len() == nodes.len()
}

/// Calls `f` on every `k`-subset of `items` in lexicographic index order.
fn for_each_subset<'a>(items: &[&'a str], k: usize, f: &mut dyn FnMut(&[&'a str])) {
    fn rec<'a>(items: &[&'a str], k: usize, start: usize, cur: &mut Vec<&'a str>, f: &mut dyn FnMut(&[&'a str])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..=items.len() - (k - cur.len()) {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, f);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut Vec::with_capacity(k), f);
}

/// The smallest set of tables containing `required` whose induced subgraph
/// is connected; among equal sizes, the lexicographically smallest sorted
/// table list. A tree over `n` tables has `n - 1` edges, so this is an
/// exact minimum Steiner tree.
pub fn steiner_tables(graph: &SchemaGraph, required: &BTreeSet<String>) -> Result<Vec<String>, TranslateError> {
    if required.is_empty() {
        return Err(TranslateError::EmptyMappings);
    }
    for t in required {
        if !graph.contains(t) {
            return Err(TranslateError::UnknownTable(t.clone()));
        }
    }
    let req: BTreeSet<&str> = required.iter().map(String::as_str).collect();
    let optional: Vec<&str> = graph.nodes().iter().map(String::as_str).filter(|n| !req.contains(n)).collect();
    for k in 0..=optional.len() {
        let mut best: Option<Vec<&str>> = None;
        for_each_subset(&optional, k, &mut |extra| {
            let mut nodes = req.clone();
            nodes.extend(extra.iter().copied());
            if connected(graph, &nodes) {
                let list: Vec<&str> = nodes.into_iter().collect();
                if best.as_ref().is_none_or(|b| list < *b) {
                    best = Some(list);
                }
            }
        });
        if let Some(b) = best {
            return Ok(b.into_iter().map(str::to_string).collect());
        }
    }
    Err(TranslateError::NoJoinPath)
}

/// Minimal join tree over the required tables, rooted at the smallest
/// entity table (the smallest table when none is an entity) and laid out
/// breadth first with neighbours in name order.
pub fn infer_join_path(graph: &SchemaGraph, schema: &Schema, mappings: &MappingSet) -> Result<JoinPath, TranslateError> {
    let tables = steiner_tables(graph, &mappings.required_tables())?;
    let set: BTreeSet<&str> = tables.iter().map(String::as_str).collect();
    let is_entity = |t: &str| schema.table(t).is_some_and(|t| t.kind == TableKind::Entity);
    let root = set.iter().copied().find(|t| is_entity(t)).unwrap_or(tables[0].as_str());
    let mut order = vec![root.to_string()];
    let mut joins = Vec::new();
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for v in graph.neighbors(u) {
            if set.contains(v) && seen.insert(v) {
                let fk = graph.links(u, v).first().expect("edge has a foreign key");
                joins.push(JoinEdge::new(u, v, fk));
                order.push(v.to_string());
                queue.push_back(v);
            }
        }
    }
    Ok(JoinPath { tables: order, joins })
}

fn quote(literal: &str) -> String {
    format!("'{}'", literal.replace('\'', "''"))
}

/// `SELECT <attributes or *> FROM root JOIN ... ON fk = pk ... WHERE
/// attr = 'literal' AND ...`. Every condition renders as `=`.
pub fn render_sql(path: &JoinPath, mappings: &MappingSet) -> String {
    let select = if mappings.attributes.is_empty() {
        "*".to_string()
    } else {
        mappings.attributes.iter().cloned().collect::<Vec<_>>().join(", ")
    };
    let mut sql = format!("SELECT {select} FROM {}", path.tables[0]);
    for j in &path.joins {
        sql.push_str(&format!(" JOIN {} ON {}.{} = {}.{}", j.table, j.from_table, j.from_attr, j.to_table, j.to_attr));
    }
    for (i, (attr, lit)) in mappings.value_spans.iter().enumerate() {
        sql.push_str(if i == 0 { " WHERE " } else { " AND " });
        sql.push_str(&format!("{attr} = {}", quote(lit)));
    }
    sql
}

/// The SQL skeleton, or [`INACCURATE`] when the tables cannot be joined.
pub fn translate(graph: &SchemaGraph, schema: &Schema, mappings: &MappingSet) -> Result<String, TranslateError> {
    mappings.validate(schema)?;
    match infer_join_path(graph, schema, mappings) {
        Ok(p) => Ok(render_sql(&p, mappings)),
        Err(TranslateError::NoJoinPath) => Ok(INACCURATE.to_string()),
        Err(e) => Err(e),
    }
}
