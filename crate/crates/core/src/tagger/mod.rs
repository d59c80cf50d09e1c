//! The multi-task GRU + CRF tagger, its ablation variants and model files.

mod crf;
mod gru;
mod io;
mod model;
mod variants;

pub use crf::{crf_log_partition, crf_marginals, crf_nll, crf_score, masked_transitions, viterbi_decode, CrfLayer, Marginals};
pub use gru::{bigru_forward, gru_step, BiGruLayer, GruCell};
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::{DBTaggerModel, Emissions, MappingKind, ModelConfig, TaggedQuery, TaggedToken, TaskHead, KeywordMapping};
pub use variants::{CrfOnly, SingleTaskBiGru, SingleTaskUniGru, StackedTagger, Variant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::TagLevel;
use crate::numerics::{Matrix, NodeId, NumericsError, Tape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaggerError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("empty query")]
    EmptyQuery,
    #[error("tag index {index} outside 0..{k}")]
    TagIndex { index: usize, k: usize },
    #[error("{tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("{} tag {tag:?} is not in the model vocabulary", .level.as_str())]
    UnknownTag { level: TagLevel, tag: String },
    #[error("task weights must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    Weights(f64, f64, f64),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    Dropout(f64),
    #[error("vocabulary {index} has level {found}, expected {expected}", found = .found.as_str(), expected = .expected.as_str())]
    VocabLevel { index: usize, expected: TagLevel, found: TagLevel },
    #[error("empty {} vocabulary", .0.as_str())]
    EmptyVocab(TagLevel),
    #[error("model expects {model}-dimensional embeddings, table has {table}")]
    EmbeddingDim { model: usize, table: usize },
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::new(rows, cols, data).expect("sized")
}

/// Source of `1 x width` dropout masks, consumed in a fixed order by each
/// forward pass.
#[derive(Clone, Debug)]
pub enum MaskStream {
    /// Inverted dropout: entries are `0` with probability `rate`, otherwise
    /// `1 / (1 - rate)`.
    Bernoulli { rng: ChaCha8Rng, rate: f64 },
    /// Every entry equals the given value.
    Fixed(f64),
}

impl MaskStream {
    pub fn bernoulli(seed: u64, rate: f64) -> Self {
        MaskStream::Bernoulli {
            rng: ChaCha8Rng::seed_from_u64(seed),
            rate,
        }
    }

    pub fn mask(&mut self, width: usize) -> Matrix {
        match self {
            MaskStream::Bernoulli { rng, rate } => {
                let keep = 1.0 / (1.0 - *rate);
                let data = (0..width)
                    .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                    .collect();
                Matrix::row_vector(data)
            }
            MaskStream::Fixed(v) => Matrix::filled(1, width, *v),
        }
    }
}

pub(crate) fn next_mask(masks: &mut Option<&mut MaskStream>, width: usize) -> Option<Matrix> {
    masks.as_mut().map(|m| m.mask(width))
}

pub(crate) fn masked(tape: &mut Tape, x: NodeId, mask: Option<Matrix>) -> Result<NodeId, TaggerError> {
    Ok(match mask {
        Some(m) => tape.apply_mask(x, m)?,
        None => x,
    })
}

/// Per-task loss weights for POS, TYPE and SCHEMA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskWeights {
    pos: f64,
    type_: f64,
    schema: f64,
}

impl TaskWeights {
    /// Sums within `1e-9` of one are accepted so that decimal inputs such as
    /// `(0.1, 0.2, 0.7)` validate.
    pub fn new(pos: f64, type_: f64, schema: f64) -> Result<Self, TaggerError> {
        let ok = [pos, type_, schema].iter().all(|w| w.is_finite() && *w >= 0.0) && (pos + type_ + schema - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(TaggerError::Weights(pos, type_, schema));
        }
        Ok(Self { pos, type_, schema })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.pos, self.type_, self.schema]
    }
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            pos: 0.1,
            type_: 0.2,
            schema: 0.7,
        }
    }
}

/// A query prepared for training: input matrix and gold index sequences
/// for every task the model learns, primary task last.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: Matrix,
    pub gold: Vec<Vec<usize>>,
}

/// What the training loop needs from a sequence model.
pub trait Trainable: Sync {
    fn parameters(&self) -> Vec<&Matrix>;

    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;

    /// Loss of `example` and its gradient with respect to `parameters()`.
    fn loss_with_grads(&self, example: &Example, masks: Option<&mut MaskStream>) -> Result<(f64, Vec<Matrix>), TaggerError>;

    /// Viterbi tags for every task, primary task last.
    fn decode(&self, x: &Matrix) -> Result<Vec<Vec<usize>>, TaggerError>;

    fn dropout(&self) -> f64;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Registers `params` on a fresh tape, builds the loss and returns its
/// value with one gradient per parameter.
pub(crate) fn differentiate<'a, F>(params: Vec<&'a Matrix>, build: F) -> Result<(f64, Vec<Matrix>), TaggerError>
where
    F: FnOnce(&mut Tape<'a>, &[NodeId]) -> Result<NodeId, TaggerError>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.into_iter().map(|p| tape.param(p)).collect();
    let loss = build(&mut tape, &ids)?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;
    let g = ids.iter().map(|&id| grads.take(id).expect("parameter gradient")).collect();
    Ok((value, g))
}

/// Forward-only evaluation with parameters registered as leaves.
pub(crate) fn evaluate<'a, T, F>(params: Vec<&'a Matrix>, build: F) -> Result<T, TaggerError>
where
    F: FnOnce(&mut Tape<'a>, &[NodeId]) -> Result<T, TaggerError>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.into_iter().map(|p| tape.constant_ref(p)).collect();
    build(&mut tape, &ids)
}

pub(crate) fn validate_dropout(rate: f64) -> Result<(), TaggerError> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(TaggerError::Dropout(rate))
    }
}
