//! Tagging metrics and latency/memory benchmarks.

mod bench;

pub use bench::{bench_latency, bench_scaling, peak_rss_bytes, synthetic_snapshot, BenchReport, ScalingMapper, ScalingRow, SYNTHETIC_SCHEMA};

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{predicted} predicted queries for {gold} gold queries")]
    QueryCount { predicted: usize, gold: usize },
    #[error("query {query}: {predicted} predicted tags for {gold} tokens")]
    TokenCount { query: usize, predicted: usize, gold: usize },
    #[error("no reports to average")]
    NoReports,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TagScore {
    pub tag: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences.
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
}

/// Token-level schema-tag metrics. Macro-F1 is the unweighted mean F1 over
/// tags that occur in the gold data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub token_accuracy: f64,
    pub macro_f1: f64,
    /// Over gold TABLE, TABLEREF, ATTR and ATTRREF tokens; `None` without any.
    pub relation_accuracy: Option<f64>,
    /// Over gold VALUE tokens; `None` without any.
    pub nonrelation_accuracy: Option<f64>,
    pub tokens: usize,
    pub correct: usize,
    pub relation_tokens: usize,
    pub relation_correct: usize,
    pub nonrelation_tokens: usize,
    pub nonrelation_correct: usize,
    pub per_tag: Vec<TagScore>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predicted schema tags, one list per gold query.
pub fn score<S: AsRef<str>>(predictions: &[Vec<S>], gold: &Dataset) -> Result<MetricsReport, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::QueryCount {
            predicted: predictions.len(),
            gold: gold.len(),
        });
    }
    #[derive(Default)]
    struct Counts {
        support: usize,
        predicted: usize,
        tp: usize,
    }
    let mut per: BTreeMap<String, Counts> = BTreeMap::new();
    let (mut tokens, mut correct) = (0, 0);
    let (mut rel, mut rel_ok, mut val, mut val_ok) = (0, 0, 0, 0);
    for (qi, (pred, q)) in predictions.iter().zip(gold.queries()).enumerate() {
        if pred.len() != q.len() {
            return Err(EvalError::TokenCount {
                query: qi,
                predicted: pred.len(),
                gold: q.len(),
            });
        }
        for (p, t) in pred.iter().zip(q.tokens()) {
            let p = p.as_ref();
            let hit = p == t.schema_tag;
            tokens += 1;
            correct += usize::from(hit);
            if t.type_tag.is_relation() {
                rel += 1;
                rel_ok += usize::from(hit);
            } else if t.type_tag == crate::corpus::TypeTag::Value {
                val += 1;
                val_ok += usize::from(hit);
            }
            per.entry(t.schema_tag.clone()).or_default().support += 1;
            let pc = per.entry(p.to_string()).or_default();
            pc.predicted += 1;
            pc.tp += usize::from(hit);
        }
    }
    let per_tag: Vec<TagScore> = per
        .into_iter()
        .map(|(tag, c)| {
            let precision = ratio(c.tp, c.predicted);
            let recall = ratio(c.tp, c.support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            TagScore {
                tag,
                precision,
                recall,
                f1,
                support: c.support,
                predicted: c.predicted,
                true_positives: c.tp,
            }
        })
        .collect();
    let present: Vec<f64> = per_tag.iter().filter(|s| s.support > 0).map(|s| s.f1).collect();
    Ok(MetricsReport {
        token_accuracy: ratio(correct, tokens),
        macro_f1: present.iter().sum::<f64>() / present.len().max(1) as f64,
        relation_accuracy: (rel > 0).then(|| ratio(rel_ok, rel)),
        nonrelation_accuracy: (val > 0).then(|| ratio(val_ok, val)),
        tokens,
        correct,
        relation_tokens: rel,
        relation_correct: rel_ok,
        nonrelation_tokens: val,
        nonrelation_correct: val_ok,
        per_tag,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "# macro-F1 averages per-tag F1 over schema tags present in gold")?;
        writeln!(f, "token_accuracy\t{:.4}\t({}/{})", self.token_accuracy, self.correct, self.tokens)?;
        writeln!(f, "macro_f1\t{:.4}", self.macro_f1)?;
        writeln!(f, "relation_accuracy\t{}\t({}/{})", opt(self.relation_accuracy), self.relation_correct, self.relation_tokens)?;
        write!(
            f,
            "nonrelation_accuracy\t{}\t({}/{})",
            opt(self.nonrelation_accuracy),
            self.nonrelation_correct,
            self.nonrelation_tokens
        )?;
        for s in &self.per_tag {
            write!(f, "\ntag\t{}\tP={:.4}\tR={:.4}\tF1={:.4}\tsupport={}", s.tag, s.precision, s.recall, s.f1, s.support)?;
        }
        Ok(())
    }
}

/// Fold reports and their unweighted means.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvSummary {
    pub folds: Vec<MetricsReport>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub mean_relation_accuracy: Option<f64>,
    pub mean_nonrelation_accuracy: Option<f64>,
}

impl CvSummary {
    pub fn new(folds: Vec<MetricsReport>) -> Result<Self, EvalError> {
        if folds.is_empty() {
            return Err(EvalError::NoReports);
        }
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        Ok(Self {
            mean_accuracy: mean(folds.iter().map(|r| r.token_accuracy).collect()).expect("non-empty"),
            mean_macro_f1: mean(folds.iter().map(|r| r.macro_f1).collect()).expect("non-empty"),
            mean_relation_accuracy: mean(folds.iter().filter_map(|r| r.relation_accuracy).collect()),
            mean_nonrelation_accuracy: mean(folds.iter().filter_map(|r| r.nonrelation_accuracy).collect()),
            folds,
        })
    }
}
