//! Binary model files.
//!
//! Layout, all integers `u64` and floats `f64`, little-endian:
//!
//! ```text
//! "DBTG1" version:u32
//! d u dropout w_pos w_type w_schema
//! 3 x (count, count x (len, utf8 bytes))      POS, TYPE, SCHEMA vocabularies
//! param_count, param_count x (rows, cols, rows*cols values)
//! ```

use std::path::Path;
use std::sync::Arc;

use super::model::{check_vocabs, DBTaggerModel, ModelConfig};
use super::{TaggerError, TaskWeights, Trainable};
use crate::corpus::{TagLevel, TagVocab};
use crate::embeddings::EmbeddingTable;

pub const MODEL_MAGIC: &[u8; 5] = b"DBTG1";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model(model: &DBTaggerModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u64(&mut out, model.embeddings().dim() as u64);
    put_u64(&mut out, model.hidden() as u64);
    out.extend_from_slice(&model.dropout().to_le_bytes());
    for w in model.weights().as_array() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for v in model.vocabs() {
        put_u64(&mut out, v.len() as u64);
        for s in v.symbols() {
            put_u64(&mut out, s.len() as u64);
            out.extend_from_slice(s.as_bytes());
        }
    }
    let params = model.parameters();
    put_u64(&mut out, params.len() as u64);
    for p in params {
        put_u64(&mut out, p.rows() as u64);
        put_u64(&mut out, p.cols() as u64);
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TaggerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TaggerError::ModelFile(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, TaggerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, TaggerError> {
        usize::try_from(self.u64()?).map_err(|_| TaggerError::ModelFile("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, TaggerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, TaggerError> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TaggerError::ModelFile("invalid utf-8 symbol".into()))
    }
}

/// Restores a model saved by [`save_model`]; the embedding table must have
/// the dimension the model was trained with.
pub fn load_model(bytes: &[u8], embeddings: Arc<EmbeddingTable>) -> Result<DBTaggerModel, TaggerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
        return Err(TaggerError::ModelFile("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(TaggerError::ModelFile(format!("unsupported version {version}")));
    }
    let d = r.usize()?;
    if d != embeddings.dim() {
        return Err(TaggerError::EmbeddingDim {
            model: d,
            table: embeddings.dim(),
        });
    }
    let hidden = r.usize()?;
    let dropout = r.f64()?;
    let weights = TaskWeights::new(r.f64()?, r.f64()?, r.f64()?)?;
    let mut vocabs = Vec::with_capacity(3);
    for level in TagLevel::ALL {
        let n = r.usize()?;
        let symbols = (0..n).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let v = TagVocab::new(level, symbols);
        if v.len() != n {
            return Err(TaggerError::ModelFile(format!("{} vocabulary is not a sorted set", level.as_str())));
        }
        vocabs.push(v);
    }
    let vocabs: [TagVocab; 3] = vocabs.try_into().expect("three levels");
    check_vocabs(&vocabs)?;
    let config = ModelConfig {
        hidden,
        dropout,
        weights,
        seed: 0,
    };
    let mut model = DBTaggerModel::new(embeddings, vocabs, config)?;
    let count = r.usize()?;
    let mut params = model.parameters_mut();
    if count != params.len() {
        return Err(TaggerError::ModelFile(format!("expected {} parameter matrices, found {count}", params.len())));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let shape = (r.usize()?, r.usize()?);
        if shape != p.shape() {
            return Err(TaggerError::ModelFile(format!(
                "parameter {i}: shape {}x{} where {}x{} was expected",
                shape.0,
                shape.1,
                p.rows(),
                p.cols()
            )));
        }
        for v in p.data_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(TaggerError::ModelFile(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

impl DBTaggerModel {
    pub fn save(&self, path: &Path) -> Result<(), TaggerError> {
        std::fs::write(path, save_model(self)).map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path, embeddings: Arc<EmbeddingTable>) -> Result<Self, TaggerError> {
        let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
        load_model(&bytes, embeddings)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> TaggerError {
    TaggerError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_tag_vocab, parse_corpus};
    use crate::embeddings::load_embeddings;

    fn model() -> DBTaggerModel {
        let d = parse_corpus("x", "who\tWP\tO\tO\nmovie\tNN\tTABLE\tmovie\n").unwrap();
        let emb = Arc::new(load_embeddings("who 1 2\n", None).unwrap());
        let config = ModelConfig {
            hidden: 3,
            dropout: 0.25,
            weights: TaskWeights::new(0.2, 0.3, 0.5).unwrap(),
            seed: 9,
        };
        DBTaggerModel::new(emb, TagLevel::ALL.map(|l| build_tag_vocab(&d, l)), config).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = save_model(&m);
        assert_eq!(&bytes[..5], b"DBTG1");
        let back = load_model(&bytes, m.embeddings().clone()).unwrap();
        assert_eq!(save_model(&back), bytes);
        for (a, b) in m.parameters().iter().zip(back.parameters()) {
            let bits = |x: &crate::numerics::Matrix| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.vocabs(), m.vocabs());
        assert_eq!(back.weights(), m.weights());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = model();
        let bytes = save_model(&m);
        let emb = m.embeddings().clone();
        assert!(matches!(load_model(b"NOPE!", emb.clone()), Err(TaggerError::ModelFile(_))));
        assert!(matches!(load_model(&bytes[..bytes.len() - 3], emb.clone()), Err(TaggerError::ModelFile(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(load_model(&extra, emb), Err(TaggerError::ModelFile(_))));
        let other = Arc::new(load_embeddings("who 1 2 3\n", None).unwrap());
        assert_eq!(load_model(&bytes, other).unwrap_err(), TaggerError::EmbeddingDim { model: 2, table: 3 });
    }
}
