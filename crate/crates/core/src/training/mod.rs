//! Optimizers, the two-phase training schedule and cross-validated runs.

mod cv;
mod optim;

pub use cv::{ablation_cv, cross_validate, model_vocabs, predict_schema_tags, train_variant, VariantModel};
pub use optim::{adadelta_step, nadam_step, AdadeltaConfig, AdadeltaState, NadamConfig, NadamState};

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset};
use crate::embeddings::EmbeddingTable;
use crate::eval::EvalError;
use crate::numerics::Matrix;
use crate::schema::Schema;
use crate::tagger::{DBTaggerModel, Example, MaskStream, ModelConfig, TaggerError, TaskWeights, Trainable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("optimizer state has {expected} entries, got {params} parameters and {grads} gradients")]
    ParameterCount { expected: usize, params: usize, grads: usize },
    #[error("parameter {index}: state {expected:?}, parameter {param:?}, gradient {grad:?}")]
    Shape {
        index: usize,
        expected: (usize, usize),
        param: (usize, usize),
        grad: (usize, usize),
    },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (queries {queries:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        queries: Vec<usize>,
    },
    #[error("no training examples")]
    NoExamples,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Total epochs `E`.
    pub epochs: usize,
    /// Last Adadelta epoch `E1`; later epochs use Nadam.
    pub switch_epoch: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub weights: TaskWeights,
    pub seed: u64,
    pub adadelta: AdadeltaConfig,
    pub nadam: NadamConfig,
    /// Stop after this many epochs without a better validation accuracy.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            switch_epoch: 50,
            batch_size: 32,
            hidden: 100,
            dropout: 0.5,
            weights: TaskWeights::default(),
            seed: 0,
            adadelta: AdadeltaConfig::default(),
            nadam: NadamConfig::default(),
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |m: String| Err(TrainingError::Config(m));
        if self.switch_epoch == 0 || self.switch_epoch > self.epochs {
            return fail(format!("need 0 < switch epoch <= epochs, got {} and {}", self.switch_epoch, self.epochs));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.hidden == 0 {
            return fail("hidden size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.patience == Some(0) {
            return fail("patience must be at least 1".into());
        }
        let [a, b, c] = self.weights.as_array();
        TaskWeights::new(a, b, c)?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            dropout: self.dropout,
            weights: self.weights,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Adadelta,
    Nadam,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Adadelta => "adadelta",
            Phase::Nadam => "nadam",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    /// Primary-task token accuracy on the validation examples.
    pub val_accuracy: Option<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},", self.epoch, self.phase.as_str(), self.mean_loss)?;
        match self.val_accuracy {
            Some(a) => write!(f, "{a}"),
            None => write!(f, "NA"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl History {
    pub const HEADER: &'static str = "epoch,phase,mean_loss,val_accuracy";

    /// Header plus one line per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        for r in &self.records {
            s.push('\n');
            s.push_str(&r.to_string());
        }
        s.push('\n');
        s
    }
}

/// SplitMix64 finalizer over a combined key.
pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Optimizer {
    Adadelta(AdadeltaState),
    Nadam(NadamState),
}

/// Fraction of primary-task tags (the last decoded sequence) that match gold.
pub fn primary_accuracy<M: Trainable>(model: &M, examples: &[Example]) -> Result<f64, TrainingError> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ex in examples {
        let pred = model.decode(&ex.x)?;
        let (p, g) = (pred.last().expect("primary task"), ex.gold.last().expect("primary task"));
        hit += p.iter().zip(g).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Trains any [`Trainable`] model: Adadelta for epochs `1..=E1`, then a
/// fresh Nadam state. Each batch sums the query losses and takes one step.
pub fn train_examples<M: Trainable>(
    model: &mut M,
    train: &[Example],
    val: Option<&[Example]>,
    config: &TrainConfig,
) -> Result<History, TrainingError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainingError::NoExamples);
    }
    let rate = model.dropout();
    let mut optimizer = Optimizer::Adadelta(AdadeltaState::new(&model.parameters(), config.adadelta));
    let mut history = History::default();
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        if epoch == config.switch_epoch + 1 {
            optimizer = Optimizer::Nadam(NadamState::new(&model.parameters(), config.nadam));
        }
        let phase = match optimizer {
            Optimizer::Adadelta(_) => Phase::Adadelta,
            Optimizer::Nadam(_) => Phase::Nadam,
        };
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, u64::MAX)));
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let m = &*model;
            let results: Vec<Result<(f64, Vec<Matrix>), TaggerError>> = batch
                .par_iter()
                .map(|&i| {
                    let mut stream = (rate > 0.0).then(|| MaskStream::bernoulli(mix(config.seed, epoch as u64, i as u64), rate));
                    m.loss_with_grads(&train[i], stream.as_mut())
                })
                .collect();
            let mut loss = 0.0;
            let mut sum: Option<Vec<Matrix>> = None;
            for r in results {
                let (l, g) = r?;
                loss += l;
                match sum.as_mut() {
                    None => sum = Some(g),
                    Some(acc) => {
                        for (a, gi) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.data_mut().iter_mut().zip(gi.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            if !loss.is_finite() {
                return Err(TrainingError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss,
                    queries: batch.to_vec(),
                });
            }
            let grads = sum.expect("non-empty batch");
            let mut params = model.parameters_mut();
            match &mut optimizer {
                Optimizer::Adadelta(s) => adadelta_step(s, &mut params, &grads)?,
                Optimizer::Nadam(s) => nadam_step(s, &mut params, &grads)?,
            }
            epoch_loss += loss;
        }
        let val_accuracy = match val {
            Some(v) if !v.is_empty() => Some(primary_accuracy(model, v)?),
            _ => None,
        };
        history.records.push(EpochRecord {
            epoch,
            phase,
            mean_loss: epoch_loss / train.len() as f64,
            val_accuracy,
        });
        if let (Some(p), Some(acc)) = (config.patience, val_accuracy) {
            if acc > best {
                best = acc;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= p {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(history)
}

pub fn encode_dataset(model: &DBTaggerModel, dataset: &Dataset) -> Result<Vec<Example>, TrainingError> {
    dataset.queries().iter().map(|q| Ok(model.encode(q)?)).collect()
}

/// Trains the multi-task model on `dataset`, logging schema accuracy on
/// `val` when given.
pub fn train(
    model: &mut DBTaggerModel,
    dataset: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<History, TrainingError> {
    let train = encode_dataset(model, dataset)?;
    let val = val.map(|v| encode_dataset(model, v)).transpose()?;
    model.set_weights(config.weights);
    model.set_dropout(config.dropout)?;
    train_examples(model, &train, val.as_deref(), config)
}

/// Builds a model from `config` and trains it.
pub fn fit(
    embeddings: Arc<EmbeddingTable>,
    schema: Option<&Schema>,
    dataset: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(DBTaggerModel, History), TrainingError> {
    config.validate()?;
    let vocabs = match val {
        Some(v) => {
            let mut all = dataset.queries().to_vec();
            all.extend(v.queries().iter().cloned());
            model_vocabs(&Dataset::new(dataset.name(), all)?, schema)?
        }
        None => model_vocabs(dataset, schema)?,
    };
    let mut model = DBTaggerModel::new(embeddings, vocabs, config.model_config())?;
    let history = train(&mut model, dataset, val, config)?;
    Ok((model, history))
}
