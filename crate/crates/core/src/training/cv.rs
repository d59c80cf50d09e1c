//! Cross-validation and the architecture ablation runner.

use std::sync::Arc;

use rayon::prelude::*;

use super::{mix, train, train_examples, TrainConfig, TrainingError};
use crate::corpus::{build_tag_vocab, split_folds, AnnotatedQuery, Dataset, TagLevel, TagVocab, TypeTag};
use crate::embeddings::EmbeddingTable;
use crate::eval::{score, CvSummary, MetricsReport};
use crate::numerics::Matrix;
use crate::schema::{derive_schema_tags, Schema};
use crate::tagger::{
    CrfOnly, DBTaggerModel, Example, SingleTaskBiGru, SingleTaskUniGru, StackedTagger, TaggerError, Trainable, Variant,
};

/// POS tags from the corpus, all seven TYPE tags, and SCHEMA tags derived
/// from the schema when given (the corpus must fit them), else collected
/// from the corpus.
pub fn model_vocabs(dataset: &Dataset, schema: Option<&Schema>) -> Result<[TagVocab; 3], TrainingError> {
    let schema_vocab = match schema {
        Some(s) => {
            let v = derive_schema_tags(s);
            dataset.check_schema_tags(&v)?;
            v
        }
        None => build_tag_vocab(dataset, TagLevel::Schema),
    };
    Ok([
        build_tag_vocab(dataset, TagLevel::Pos),
        TagVocab::new(TagLevel::Type, TypeTag::ALL.iter().map(|t| t.as_str())),
        schema_vocab,
    ])
}

/// Decoded SCHEMA tags for every query.
pub fn predict_schema_tags(model: &DBTaggerModel, dataset: &Dataset) -> Result<Vec<Vec<String>>, TrainingError> {
    dataset
        .queries()
        .par_iter()
        .map(|q| Ok(model.tag_query(&q.texts())?.tokens.into_iter().map(|t| t.schema_tag).collect()))
        .collect()
}

enum Inner {
    Crf(CrfOnly),
    StUni(SingleTaskUniGru),
    StBi(SingleTaskBiGru),
    /// POS, TYPE and SCHEMA stages; later stages read the previous
    /// stage's predictions as one-hot features.
    MtSeq(Box<[StackedTagger; 3]>),
    DBTagger(Box<DBTaggerModel>),
}

/// A trained model of any ablation variant.
pub struct VariantModel {
    variant: Variant,
    embeddings: Arc<EmbeddingTable>,
    vocabs: [TagVocab; 3],
    inner: Inner,
}

fn level_vocab(vocabs: &[TagVocab; 3], level: TagLevel) -> &TagVocab {
    &vocabs[TagLevel::ALL.iter().position(|&l| l == level).expect("level")]
}

fn gold_indices(vocab: &TagVocab, q: &AnnotatedQuery) -> Result<Vec<usize>, TaggerError> {
    q.tags(vocab.level())
        .iter()
        .map(|t| {
            vocab.index_of(t).ok_or_else(|| TaggerError::UnknownTag {
                level: vocab.level(),
                tag: t.to_string(),
            })
        })
        .collect()
}

/// `[x, onehot(tags)]`.
fn with_onehot(x: &Matrix, tags: &[usize], k: usize) -> Matrix {
    let (n, d) = x.shape();
    let mut data = Vec::with_capacity(n * (d + k));
    for (i, &t) in tags.iter().enumerate() {
        data.extend_from_slice(x.row(i));
        data.extend((0..k).map(|j| if j == t { 1.0 } else { 0.0 }));
    }
    Matrix::new(n, d + k, data).expect("sized")
}

fn single_task_examples(
    inputs: &[Matrix],
    dataset: &Dataset,
    vocab: &TagVocab,
) -> Result<Vec<Example>, TrainingError> {
    inputs
        .iter()
        .zip(dataset.queries())
        .map(|(x, q)| {
            Ok(Example {
                x: x.clone(),
                gold: vec![gold_indices(vocab, q)?],
            })
        })
        .collect()
}

fn fit_single<M: Trainable>(mut model: M, inputs: &[Matrix], dataset: &Dataset, vocab: &TagVocab, config: &TrainConfig) -> Result<M, TrainingError> {
    let ex = single_task_examples(inputs, dataset, vocab)?;
    train_examples(&mut model, &ex, None, config)?;
    Ok(model)
}

fn decode_primary<M: Trainable>(model: &M, x: &Matrix) -> Result<Vec<usize>, TrainingError> {
    Ok(model.decode(x)?.pop().expect("primary task"))
}

/// Trains one ablation variant on `dataset`. Single-task variants learn
/// SCHEMA only; MT_Seq trains its three stages in order.
pub fn train_variant(
    variant: Variant,
    embeddings: Arc<EmbeddingTable>,
    vocabs: [TagVocab; 3],
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<VariantModel, TrainingError> {
    config.validate()?;
    let d = embeddings.dim();
    let (u, p, seed) = (config.hidden, config.dropout, config.seed);
    let schema = level_vocab(&vocabs, TagLevel::Schema);
    let ks = schema.len();
    let inputs: Vec<Matrix> = dataset.queries().iter().map(|q| embeddings.embed_query(&q.texts())).collect();
    let inner = match variant {
        Variant::Crf => Inner::Crf(fit_single(CrfOnly::new(d, ks, p, seed)?, &inputs, dataset, schema, config)?),
        Variant::StUni => Inner::StUni(fit_single(SingleTaskUniGru::new(d, u, ks, p, seed)?, &inputs, dataset, schema, config)?),
        Variant::StBi => Inner::StBi(fit_single(SingleTaskBiGru::new(d, u, ks, p, seed)?, &inputs, dataset, schema, config)?),
        Variant::MtSeq => {
            let mut stages = Vec::with_capacity(3);
            let mut stage_inputs = inputs.clone();
            for (s, level) in TagLevel::ALL.into_iter().enumerate() {
                let vocab = level_vocab(&vocabs, level);
                let stage_config = TrainConfig {
                    seed: mix(seed, s as u64, 1),
                    ..*config
                };
                let model = StackedTagger::new(stage_inputs[0].cols(), u, vocab.len(), p, stage_config.seed)?;
                let model = fit_single(model, &stage_inputs, dataset, vocab, &stage_config)?;
                if s < 2 {
                    stage_inputs = inputs
                        .iter()
                        .zip(&stage_inputs)
                        .map(|(x, xs)| Ok(with_onehot(x, &decode_primary(&model, xs)?, vocab.len())))
                        .collect::<Result<_, TrainingError>>()?;
                }
                stages.push(model);
            }
            Inner::MtSeq(Box::new(stages.try_into().map_err(|_| ()).expect("three stages")))
        }
        Variant::DBTagger => {
            let mut m = DBTaggerModel::new(embeddings.clone(), vocabs.clone(), config.model_config())?;
            train(&mut m, dataset, None, config)?;
            Inner::DBTagger(Box::new(m))
        }
    };
    Ok(VariantModel {
        variant,
        embeddings,
        vocabs,
        inner,
    })
}

impl VariantModel {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn parameter_count(&self) -> usize {
        match &self.inner {
            Inner::Crf(m) => m.parameter_count(),
            Inner::StUni(m) => m.parameter_count(),
            Inner::StBi(m) => m.parameter_count(),
            Inner::MtSeq(s) => s.iter().map(|m| m.parameter_count()).sum(),
            Inner::DBTagger(m) => m.parameter_count(),
        }
    }

    /// SCHEMA tags for one tokenized query.
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>, TrainingError> {
        if tokens.is_empty() {
            return Err(TaggerError::EmptyQuery.into());
        }
        let x = self.embeddings.embed_query(tokens);
        let idx = match &self.inner {
            Inner::Crf(m) => decode_primary(m, &x)?,
            Inner::StUni(m) => decode_primary(m, &x)?,
            Inner::StBi(m) => decode_primary(m, &x)?,
            Inner::MtSeq(s) => {
                let pos = decode_primary(&s[0], &x)?;
                let types = decode_primary(&s[1], &with_onehot(&x, &pos, self.vocabs[0].len()))?;
                decode_primary(&s[2], &with_onehot(&x, &types, self.vocabs[1].len()))?
            }
            Inner::DBTagger(m) => decode_primary(m.as_ref(), &x)?,
        };
        let schema = &self.vocabs[2];
        Ok(idx.into_iter().map(|i| schema.symbol(i).expect("decoded index").to_string()).collect())
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<Vec<String>>, TrainingError> {
        dataset.queries().par_iter().map(|q| self.predict(&q.texts())).collect()
    }
}

/// `k`-fold cross-validation of the multi-task model. Every fold trains
/// with the same seed, so identical folds give identical models.
pub fn cross_validate(
    dataset: &Dataset,
    schema: Option<&Schema>,
    embeddings: Arc<EmbeddingTable>,
    config: &TrainConfig,
    k: usize,
) -> Result<CvSummary, TrainingError> {
    let mut out = ablation_cv(dataset, schema, embeddings, config, k, &[Variant::DBTagger])?;
    Ok(out.pop().expect("one variant").1)
}

/// Cross-validates each variant on the same folds.
pub fn ablation_cv(
    dataset: &Dataset,
    schema: Option<&Schema>,
    embeddings: Arc<EmbeddingTable>,
    config: &TrainConfig,
    k: usize,
    variants: &[Variant],
) -> Result<Vec<(Variant, CvSummary)>, TrainingError> {
    config.validate()?;
    let vocabs = model_vocabs(dataset, schema)?;
    let folds = split_folds(dataset, k, config.seed)?;
    variants
        .iter()
        .map(|&variant| {
            let reports = folds
                .par_iter()
                .map(|fold| -> Result<MetricsReport, TrainingError> {
                    let model = train_variant(variant, embeddings.clone(), vocabs.clone(), &fold.train, config)?;
                    Ok(score(&model.predict_dataset(&fold.test)?, &fold.test)?)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((variant, CvSummary::new(reports)?))
        })
        .collect()
}
