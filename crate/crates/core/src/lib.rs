//! Keyword mapping for natural-language database queries: a multi-task
//! GRU + CRF tagger over POS, TYPE and SCHEMA tags, unsupervised baseline
//! mappers, evaluation, and a join-path based SQL skeleton translator.

pub mod baselines;
pub mod corpus;
pub mod embeddings;
pub mod eval;
pub mod numerics;
pub mod schema;
pub mod tagger;
pub mod training;
pub mod translate;

pub use baselines::{
    build_value_index, edit_distance_relation_map, embedding_similarity_map, scan_map, tfidf_map, BaselineError, InvertedValueIndex,
    MappingResult, MatchKind,
};
pub use corpus::{parse_corpus, split_folds, AnnotatedQuery, CorpusError, Dataset, TagLevel, TagVocab, Token, TypeTag};
pub use embeddings::{load_embeddings, load_embeddings_file, EmbeddingError, EmbeddingTable};
pub use eval::{bench_latency, bench_scaling, score, BenchReport, CvSummary, EvalError, MetricsReport};
pub use numerics::{Matrix, NumericsError};
pub use schema::{
    build_schema_graph, derive_schema_tags, load_schema, load_schema_file, load_snapshot, load_snapshot_dir, schema_stats, ContentSnapshot,
    Schema, SchemaError, SchemaGraph, SchemaStats,
};
pub use tagger::{DBTaggerModel, ModelConfig, TaggedQuery, TaggerError, TaskWeights, Variant};
pub use training::{cross_validate, train, History, TrainConfig, TrainingError};
pub use translate::{infer_join_path, mappings_from_tags, render_sql, JoinPath, MappingSet, TranslateError};
