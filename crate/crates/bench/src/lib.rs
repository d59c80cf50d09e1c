//! Inputs shared by the benchmarks.

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dbtagger::corpus::{parse_corpus, Dataset};
use dbtagger::embeddings::{load_embeddings_file, EmbeddingTable};
use dbtagger::numerics::Matrix;
use dbtagger::tagger::masked_transitions;
use dbtagger::training::{fit, TrainConfig};
use dbtagger::DBTaggerModel;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

pub fn fixture_corpus() -> Dataset {
    let text = std::fs::read_to_string(fixture("imdb_small.tsv")).expect("fixture corpus");
    parse_corpus("imdb_small", &text).expect("valid corpus")
}

pub fn fixture_embeddings() -> Arc<EmbeddingTable> {
    Arc::new(load_embeddings_file(&fixture("embeddings_300d.vec"), Some(300)).expect("fixture vectors"))
}

/// Transition and emission matrices for a `len`-token sequence over `k` tags.
pub fn crf_instance(len: usize, k: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = masked_transitions(k);
    for i in 0..k {
        for j in 0..k {
            a.set(i, j, rng.random_range(-1.0..1.0));
        }
    }
    for j in 0..k {
        a.set(k, j, rng.random_range(-1.0..1.0));
        a.set(j, k + 1, rng.random_range(-1.0..1.0));
    }
    let g = Matrix::new(len, k, (0..len * k).map(|_| rng.random_range(-2.0..2.0)).collect()).expect("sized");
    (a, g)
}

/// A model briefly trained on the fixture corpus; latency does not depend
/// on how well it is trained.
pub fn quick_model(hidden: usize) -> DBTaggerModel {
    let config = TrainConfig {
        epochs: 2,
        switch_epoch: 1,
        hidden,
        ..TrainConfig::default()
    };
    let schema = dbtagger::load_schema_file(&fixture("schemas/imdb_small.json")).expect("fixture schema");
    fit(fixture_embeddings(), Some(&schema), &fixture_corpus(), None, &config).expect("training runs").0
}
