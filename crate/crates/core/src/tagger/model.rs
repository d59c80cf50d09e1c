use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::crf::{nll_node, viterbi_decode, CrfLayer};
use super::gru::{BiGruLayer, GruCell};
use super::{
    differentiate, evaluate, masked, next_mask, validate_dropout, Example, MaskStream, TaggerError, TaskWeights, Trainable,
};
use crate::corpus::{AnnotatedQuery, TagLevel, TagVocab, TypeTag, COND, OTHER};
use crate::embeddings::EmbeddingTable;
use crate::numerics::{Matrix, NodeId, Tape};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Units `u` of every GRU direction.
    pub hidden: usize,
    pub dropout: f64,
    pub weights: TaskWeights,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            dropout: 0.5,
            weights: TaskWeights::default(),
            seed: 0,
        }
    }
}

/// A per-task uni-directional GRU over the shared encoding and its CRF.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    pub task: TagLevel,
    pub gru: GruCell,
    pub crf: CrfLayer,
}

impl TaskHead {
    const PARAMS: usize = GruCell::PARAMS + CrfLayer::PARAMS;

    /// Width of the previous task's GRU output feeding this head's CRF.
    pub fn skip_width(&self) -> usize {
        self.crf.features() - self.gru.hidden_size()
    }

    fn params(&self) -> Vec<&Matrix> {
        let mut p = self.gru.params();
        p.extend(self.crf.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.gru.params_mut();
        p.extend(self.crf.params_mut());
        p
    }
}

/// Emission scores `G` for POS, TYPE and SCHEMA.
pub type Emissions = [Matrix; 3];

/// Shared bi-GRU, then POS, TYPE and SCHEMA heads. The CRF of each later
/// head also reads the previous head's GRU output.
#[derive(Clone, Debug)]
pub struct DBTaggerModel {
    pub(crate) embeddings: Arc<EmbeddingTable>,
    pub(crate) vocabs: [TagVocab; 3],
    pub(crate) weights: TaskWeights,
    pub(crate) dropout: f64,
    pub(crate) shared: BiGruLayer,
    pub(crate) heads: [TaskHead; 3],
}

impl DBTaggerModel {
    pub fn new(embeddings: Arc<EmbeddingTable>, vocabs: [TagVocab; 3], config: ModelConfig) -> Result<Self, TaggerError> {
        validate_dropout(config.dropout)?;
        check_vocabs(&vocabs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let u = config.hidden;
        let shared = BiGruLayer::new(embeddings.dim(), u, &mut rng);
        let heads = [0, 1, 2].map(|i| {
            let features = if i == 0 { u } else { 2 * u };
            TaskHead {
                task: TagLevel::ALL[i],
                gru: GruCell::new(2 * u, u, &mut rng),
                crf: CrfLayer::new(features, vocabs[i].len(), &mut rng),
            }
        });
        Ok(Self {
            embeddings,
            vocabs,
            weights: config.weights,
            dropout: config.dropout,
            shared,
            heads,
        })
    }

    pub fn embeddings(&self) -> &Arc<EmbeddingTable> {
        &self.embeddings
    }

    pub fn vocab(&self, level: TagLevel) -> &TagVocab {
        &self.vocabs[level_index(level)]
    }

    pub fn vocabs(&self) -> &[TagVocab; 3] {
        &self.vocabs
    }

    pub fn weights(&self) -> TaskWeights {
        self.weights
    }

    pub fn set_weights(&mut self, weights: TaskWeights) {
        self.weights = weights;
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<(), TaggerError> {
        validate_dropout(rate)?;
        self.dropout = rate;
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.shared.hidden_size()
    }

    pub fn shared(&self) -> &BiGruLayer {
        &self.shared
    }

    pub fn heads(&self) -> &[TaskHead; 3] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [TaskHead; 3] {
        &mut self.heads
    }

    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Matrix, TaggerError> {
        if tokens.is_empty() {
            return Err(TaggerError::EmptyQuery);
        }
        Ok(self.embeddings.embed_query(tokens))
    }

    /// Embeds the tokens and maps gold tags to indices.
    pub fn encode(&self, query: &AnnotatedQuery) -> Result<Example, TaggerError> {
        let x = self.embed(&query.texts())?;
        let gold = TagLevel::ALL
            .iter()
            .map(|&level| tag_indices(&self.vocabs[level_index(level)], &query.tags(level)))
            .collect::<Result<_, _>>()?;
        Ok(Example { x, gold })
    }

    /// Emission nodes for the three heads. Masks are drawn in a fixed order:
    /// shared forward and backward recurrent states, shared outputs, the
    /// three head recurrent states, then the three CRF inputs.
    fn forward(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId, mut masks: Option<&mut MaskStream>) -> Result<[NodeId; 3], TaggerError> {
        let u = self.hidden();
        let shared_masks = [next_mask(&mut masks, u), next_mask(&mut masks, u)];
        let h = self.shared.run(tape, &ids[..BiGruLayer::PARAMS], x, shared_masks)?;
        let out_mask = next_mask(&mut masks, 2 * u);
        let h = masked(tape, h, out_mask)?;

        let mut states = Vec::with_capacity(3);
        for (i, head) in self.heads.iter().enumerate() {
            let hid = head_ids(ids, i);
            let rec = next_mask(&mut masks, u);
            states.push(head.gru.run(tape, &hid[..GruCell::PARAMS], h, false, rec)?);
        }
        let mut out = [states[0]; 3];
        for (i, head) in self.heads.iter().enumerate() {
            let features = if i == 0 { states[0] } else { tape.concat_cols(&[states[i], states[i - 1]])? };
            let fmask = next_mask(&mut masks, head.crf.features());
            let features = masked(tape, features, fmask)?;
            out[i] = head.crf.emissions(tape, &head_ids(ids, i)[GruCell::PARAMS..], features)?;
        }
        Ok(out)
    }

    fn transitions(ids: &[NodeId], i: usize) -> NodeId {
        head_ids(ids, i)[GruCell::PARAMS]
    }

    /// Emissions for each task. Without a mask stream the pass is
    /// deterministic inference; with one, dropout masks are applied.
    pub fn model_forward<S: AsRef<str>>(&self, tokens: &[S], masks: Option<&mut MaskStream>) -> Result<Emissions, TaggerError> {
        let x = self.embed(tokens)?;
        self.emissions(&x, masks)
    }

    pub fn emissions(&self, x: &Matrix, masks: Option<&mut MaskStream>) -> Result<Emissions, TaggerError> {
        evaluate(self.parameters(), |tape, ids| {
            let xn = tape.constant(x.clone());
            let g = self.forward(tape, ids, xn, masks)?;
            Ok(g.map(|n| tape.value(n).clone()))
        })
    }

    /// Unweighted CRF losses of the three tasks.
    pub fn task_losses(&self, example: &Example, masks: Option<&mut MaskStream>) -> Result<[f64; 3], TaggerError> {
        let g = self.emissions(&example.x, masks)?;
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = super::crf_nll(&self.heads[i].crf.transitions, &g[i], &example.gold[i])?;
        }
        Ok(out)
    }

    /// `w_pos L_pos + w_type L_type + w_schema L_schema`.
    pub fn total_loss(&self, query: &AnnotatedQuery, masks: Option<&mut MaskStream>) -> Result<f64, TaggerError> {
        let ex = self.encode(query)?;
        Ok(self.loss_with_grads(&ex, masks)?.0)
    }

    /// Decodes TYPE and SCHEMA and merges consecutive VALUE tokens that
    /// share a schema tag into one keyword.
    pub fn tag_query<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TaggedQuery, TaggerError> {
        let x = self.embed(tokens)?;
        let paths = self.decode(&x)?;
        let symbol = |level: TagLevel, i: usize| self.vocab(level).symbol(i).expect("decoded index in vocabulary").to_string();
        let tagged = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let type_sym = symbol(TagLevel::Type, paths[1][i]);
                TaggedToken {
                    text: t.as_ref().to_string(),
                    pos: symbol(TagLevel::Pos, paths[0][i]),
                    type_tag: type_sym.parse().unwrap_or(TypeTag::Other),
                    schema_tag: symbol(TagLevel::Schema, paths[2][i]),
                }
            })
            .collect();
        Ok(TaggedQuery::new(tagged))
    }
}

fn level_index(level: TagLevel) -> usize {
    match level {
        TagLevel::Pos => 0,
        TagLevel::Type => 1,
        TagLevel::Schema => 2,
    }
}

fn head_ids(ids: &[NodeId], i: usize) -> &[NodeId] {
    let start = BiGruLayer::PARAMS + i * TaskHead::PARAMS;
    &ids[start..start + TaskHead::PARAMS]
}

pub(crate) fn check_vocabs(vocabs: &[TagVocab; 3]) -> Result<(), TaggerError> {
    for (i, v) in vocabs.iter().enumerate() {
        if v.level() != TagLevel::ALL[i] {
            return Err(TaggerError::VocabLevel {
                index: i,
                expected: TagLevel::ALL[i],
                found: v.level(),
            });
        }
        if v.is_empty() {
            return Err(TaggerError::EmptyVocab(v.level()));
        }
    }
    Ok(())
}

pub(crate) fn tag_indices(vocab: &TagVocab, tags: &[&str]) -> Result<Vec<usize>, TaggerError> {
    tags.iter()
        .map(|t| {
            vocab.index_of(t).ok_or_else(|| TaggerError::UnknownTag {
                level: vocab.level(),
                tag: t.to_string(),
            })
        })
        .collect()
}

impl Trainable for DBTaggerModel {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut p = self.shared.params();
        for h in &self.heads {
            p.extend(h.params());
        }
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.shared.params_mut();
        for h in &mut self.heads {
            p.extend(h.params_mut());
        }
        p
    }

    fn loss_with_grads(&self, example: &Example, masks: Option<&mut MaskStream>) -> Result<(f64, Vec<Matrix>), TaggerError> {
        if example.gold.len() != 3 {
            return Err(TaggerError::LengthMismatch {
                tokens: 3,
                tags: example.gold.len(),
            });
        }
        let w = self.weights.as_array();
        differentiate(self.parameters(), |tape, ids| {
            let x = tape.constant(example.x.clone());
            let g = self.forward(tape, ids, x, masks)?;
            let mut total: Option<NodeId> = None;
            for i in 0..3 {
                let nll = nll_node(tape, g[i], Self::transitions(ids, i), &example.gold[i])?;
                let term = tape.scale(nll, w[i])?;
                total = Some(match total {
                    Some(t) => tape.add(t, term)?,
                    None => term,
                });
            }
            Ok(total.expect("three tasks"))
        })
    }

    fn decode(&self, x: &Matrix) -> Result<Vec<Vec<usize>>, TaggerError> {
        let g = self.emissions(x, None)?;
        (0..3)
            .map(|i| Ok(viterbi_decode(&self.heads[i].crf.transitions, &g[i])?.0))
            .collect()
    }

    fn dropout(&self) -> f64 {
        self.dropout
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TaggedToken {
    pub text: String,
    pub pos: String,
    #[serde(serialize_with = "type_as_str")]
    pub type_tag: TypeTag,
    pub schema_tag: String,
}

fn type_as_str<S: serde::Serializer>(t: &TypeTag, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(t.as_str())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    Table,
    Attribute,
    Value,
}

/// A keyword mapped to a schema element; `end` is exclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KeywordMapping {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub kind: MappingKind,
    #[serde(serialize_with = "type_as_str")]
    pub type_tag: TypeTag,
    pub schema_tag: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TaggedQuery {
    pub tokens: Vec<TaggedToken>,
    /// Tokens tagged with neither `O` nor `COND`, value runs merged.
    pub mappings: Vec<KeywordMapping>,
}

impl TaggedQuery {
    pub fn new(tokens: Vec<TaggedToken>) -> Self {
        let mut mappings: Vec<KeywordMapping> = Vec::new();
        for (i, t) in tokens.iter().enumerate() {
            let kind = match t.type_tag {
                TypeTag::Table | TypeTag::TableRef => MappingKind::Table,
                TypeTag::Attr | TypeTag::AttrRef => MappingKind::Attribute,
                TypeTag::Value => MappingKind::Value,
                TypeTag::Cond | TypeTag::Other => continue,
            };
            if t.schema_tag == OTHER || t.schema_tag == COND {
                continue;
            }
            if let Some(last) = mappings.last_mut() {
                if kind == MappingKind::Value && last.kind == MappingKind::Value && last.end == i && last.schema_tag == t.schema_tag {
                    last.end = i + 1;
                    last.text.push(' ');
                    last.text.push_str(&t.text);
                    continue;
                }
            }
            mappings.push(KeywordMapping {
                start: i,
                end: i + 1,
                text: t.text.clone(),
                kind,
                type_tag: t.type_tag,
                schema_tag: t.schema_tag.clone(),
            });
        }
        Self { tokens, mappings }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_tag_vocab, parse_corpus, Dataset};
    use crate::embeddings::load_embeddings;
    use crate::numerics::{finite_diff_check, Coordinates};

    const TWO: &str = "who\tWP\tO\tO\nacted\tVBD\tTABLEREF\tcast\nNash\tNNP\tVALUE\tcast.role\n\nthe\tDT\tO\tO\nmovie\tNN\tTABLE\tmovie\n";

    fn setup(hidden: usize, weights: TaskWeights) -> (Dataset, DBTaggerModel) {
        let d = parse_corpus("two", TWO).unwrap();
        let emb = load_embeddings("who 0.1 0.2 0.3 0.4\nacted 0.5 -0.1 0.0 0.2\nmovie -0.3 0.3 0.1 0.0\n", None).unwrap();
        let vocabs = TagLevel::ALL.map(|l| build_tag_vocab(&d, l));
        let config = ModelConfig {
            hidden,
            dropout: 0.5,
            weights,
            seed: 3,
        };
        (d.clone(), DBTaggerModel::new(Arc::new(emb), vocabs, config).unwrap())
    }

    #[test]
    fn emission_widths() {
        let (_, m) = setup(5, TaskWeights::default());
        assert_eq!(m.heads[0].crf.features(), 5);
        assert_eq!(m.heads[1].crf.features(), 10);
        assert_eq!(m.heads[2].crf.features(), 10);
        assert_eq!(m.heads[0].skip_width(), 0);
        assert_eq!(m.heads[2].skip_width(), 5);
        let g = m.model_forward(&["who", "acted"], None).unwrap();
        assert_eq!(g[2].shape(), (2, m.vocab(TagLevel::Schema).len()));
    }

    #[test]
    fn inference_is_repeatable() {
        let (_, m) = setup(4, TaskWeights::default());
        let a = m.model_forward(&["who", "acted", "Nash"], None).unwrap();
        let b = m.model_forward(&["who", "acted", "Nash"], None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_dropped_masks_leave_biases() {
        let (_, mut m) = setup(4, TaskWeights::default());
        for h in &mut m.heads {
            h.crf.bias = Matrix::row_vector((0..h.crf.k()).map(|j| j as f64 * 0.5).collect());
        }
        let g = m.model_forward(&["who", "acted"], Some(&mut MaskStream::Fixed(0.0))).unwrap();
        for (i, gi) in g.iter().enumerate() {
            for r in 0..2 {
                assert_eq!(gi.row(r), m.heads[i].crf.bias.row(0));
            }
        }
    }

    #[test]
    fn schema_only_weights() {
        let (d, m) = setup(4, TaskWeights::new(0.0, 0.0, 1.0).unwrap());
        let ex = m.encode(&d.queries()[0]).unwrap();
        let l = m.task_losses(&ex, None).unwrap();
        assert_eq!(m.total_loss(&d.queries()[0], None).unwrap(), l[2]);
    }

    #[test]
    fn weighted_sum_is_exact() {
        let (d, m) = setup(4, TaskWeights::new(0.1, 0.2, 0.7).unwrap());
        let ex = m.encode(&d.queries()[0]).unwrap();
        let [a, b, c] = m.task_losses(&ex, None).unwrap();
        assert_eq!(m.total_loss(&d.queries()[0], None).unwrap(), 0.1 * a + 0.2 * b + 0.7 * c);
    }

    #[test]
    fn unknown_tag_is_rejected() {
        let (_, m) = setup(3, TaskWeights::default());
        let other = parse_corpus("x", "x\tNN\tTABLE\tpeople\n").unwrap();
        assert!(matches!(m.encode(&other.queries()[0]), Err(TaggerError::UnknownTag { level: TagLevel::Schema, .. })));
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let (d, m) = setup(3, TaskWeights::default());
        let ex = m.encode(&d.queries()[0]).unwrap();
        let (_, analytic) = m.loss_with_grads(&ex, None).unwrap();
        let mut params: Vec<Matrix> = m.parameters().into_iter().cloned().collect();
        let mut probe = m.clone();
        let r = finite_diff_check(
            |ps| {
                for (dst, src) in probe.parameters_mut().into_iter().zip(ps) {
                    dst.clone_from(src);
                }
                probe.loss_with_grads(&ex, None).unwrap().0
            },
            &mut params,
            &analytic,
            1e-5,
            Coordinates::All,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    fn tok(text: &str, t: TypeTag, s: &str) -> TaggedToken {
        TaggedToken {
            text: text.into(),
            pos: "NN".into(),
            type_tag: t,
            schema_tag: s.into(),
        }
    }

    #[test]
    fn value_runs_merge() {
        let q = TaggedQuery::new(vec![
            tok("who", TypeTag::Other, "O"),
            tok("acted", TypeTag::TableRef, "cast"),
            tok("John", TypeTag::Value, "cast.role"),
            tok("Nash", TypeTag::Value, "cast.role"),
            tok("in", TypeTag::Cond, "COND"),
            tok("A", TypeTag::Value, "movie.title"),
            tok("Mind", TypeTag::Value, "movie.title"),
        ]);
        let spans: Vec<(usize, usize, &str)> = q.mappings.iter().map(|m| (m.start, m.end, m.text.as_str())).collect();
        assert_eq!(spans, [(1, 2, "acted"), (2, 4, "John Nash"), (5, 7, "A Mind")]);
    }

    #[test]
    fn all_other_gives_no_mappings() {
        let q = TaggedQuery::new(vec![tok("a", TypeTag::Other, "O"), tok("b", TypeTag::Other, "O")]);
        assert!(q.mappings.is_empty());
    }

    #[test]
    fn attribute_and_value_are_distinguished() {
        let q = TaggedQuery::new(vec![tok("title", TypeTag::Attr, "movie.title"), tok("Heat", TypeTag::Value, "movie.title")]);
        assert_eq!(q.mappings.len(), 2);
        assert_eq!(q.mappings[0].kind, MappingKind::Attribute);
        assert_eq!(q.mappings[1].kind, MappingKind::Value);
    }
}
