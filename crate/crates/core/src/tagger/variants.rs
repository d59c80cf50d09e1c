//! Single-task architectures used in ablations. Each predicts one tag level
//! from an input matrix; `Example::gold` holds exactly one sequence.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::crf::{nll_node, viterbi_decode, CrfLayer};
use super::gru::{BiGruLayer, GruCell};
use super::{differentiate, evaluate, masked, next_mask, validate_dropout, Example, MaskStream, TaggerError, Trainable};
use crate::numerics::{Matrix, NodeId, Tape};

/// Architectures compared in ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Affine map of the embeddings straight into a CRF.
    Crf,
    /// Two stacked uni-directional GRUs.
    StUni,
    /// Two stacked bi-directional GRUs.
    StBi,
    /// Separate POS, TYPE and SCHEMA models, each reading the previous
    /// model's predictions.
    MtSeq,
    /// The joint multi-task model.
    DBTagger,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Crf, Variant::StUni, Variant::StBi, Variant::MtSeq, Variant::DBTagger];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Crf => "CRF",
            Variant::StUni => "ST_Uni",
            Variant::StBi => "ST_Bi",
            Variant::MtSeq => "MT_Seq",
            Variant::DBTagger => "DBTagger",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

fn single_gold(example: &Example) -> Result<&[usize], TaggerError> {
    match example.gold.as_slice() {
        [g] => Ok(g),
        other => Err(TaggerError::LengthMismatch {
            tokens: 1,
            tags: other.len(),
        }),
    }
}

/// Shared plumbing: an encoder producing CRF features, then the CRF.
trait Encoder: Sync {
    fn encoder_params(&self) -> Vec<&Matrix>;
    /// Encoder parameters and the CRF, borrowed together.
    fn split_mut(&mut self) -> (Vec<&mut Matrix>, &mut CrfLayer);
    fn encode(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId, masks: &mut Option<&mut MaskStream>) -> Result<NodeId, TaggerError>;
    fn crf(&self) -> &CrfLayer;
    fn rate(&self) -> f64;

    fn all_params(&self) -> Vec<&Matrix> {
        let mut p = self.encoder_params();
        p.extend(self.crf().params());
        p
    }

    fn emissions(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId, mut masks: Option<&mut MaskStream>) -> Result<NodeId, TaggerError> {
        let split = ids.len() - CrfLayer::PARAMS;
        let f = self.encode(tape, &ids[..split], x, &mut masks)?;
        let fmask = next_mask(&mut masks, self.crf().features());
        let f = masked(tape, f, fmask)?;
        self.crf().emissions(tape, &ids[split..], f)
    }
}

impl<T: Encoder> Trainable for T {
    fn parameters(&self) -> Vec<&Matrix> {
        self.all_params()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let (mut p, crf) = self.split_mut();
        p.extend(crf.params_mut());
        p
    }

    fn loss_with_grads(&self, example: &Example, masks: Option<&mut MaskStream>) -> Result<(f64, Vec<Matrix>), TaggerError> {
        let gold = single_gold(example)?;
        differentiate(self.all_params(), |tape, ids| {
            let x = tape.constant(example.x.clone());
            let g = self.emissions(tape, ids, x, masks)?;
            let a = ids[ids.len() - CrfLayer::PARAMS];
            nll_node(tape, g, a, gold)
        })
    }

    fn decode(&self, x: &Matrix) -> Result<Vec<Vec<usize>>, TaggerError> {
        let g = evaluate(self.all_params(), |tape, ids| {
            let xn = tape.constant(x.clone());
            let g = self.emissions(tape, ids, xn, None)?;
            Ok(tape.value(g).clone())
        })?;
        Ok(vec![viterbi_decode(&self.crf().transitions, &g)?.0])
    }

    fn dropout(&self) -> f64 {
        self.rate()
    }
}

/// Embeddings projected straight to emissions.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfOnly {
    pub crf: CrfLayer,
    pub dropout: f64,
}

impl CrfOnly {
    pub fn new(input: usize, k: usize, dropout: f64, seed: u64) -> Result<Self, TaggerError> {
        validate_dropout(dropout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            crf: CrfLayer::new(input, k, &mut rng),
            dropout,
        })
    }
}

impl Encoder for CrfOnly {
    fn encoder_params(&self) -> Vec<&Matrix> {
        Vec::new()
    }

    fn split_mut(&mut self) -> (Vec<&mut Matrix>, &mut CrfLayer) {
        (Vec::new(), &mut self.crf)
    }

    fn encode(&self, _: &mut Tape, _: &[NodeId], x: NodeId, _: &mut Option<&mut MaskStream>) -> Result<NodeId, TaggerError> {
        Ok(x)
    }

    fn crf(&self) -> &CrfLayer {
        &self.crf
    }

    fn rate(&self) -> f64 {
        self.dropout
    }
}

/// Two uni-directional GRUs.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleTaskUniGru {
    pub first: GruCell,
    pub second: GruCell,
    pub crf: CrfLayer,
    pub dropout: f64,
}

impl SingleTaskUniGru {
    pub fn new(input: usize, hidden: usize, k: usize, dropout: f64, seed: u64) -> Result<Self, TaggerError> {
        validate_dropout(dropout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            first: GruCell::new(input, hidden, &mut rng),
            second: GruCell::new(hidden, hidden, &mut rng),
            crf: CrfLayer::new(hidden, k, &mut rng),
            dropout,
        })
    }
}

impl Encoder for SingleTaskUniGru {
    fn encoder_params(&self) -> Vec<&Matrix> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }

    fn split_mut(&mut self) -> (Vec<&mut Matrix>, &mut CrfLayer) {
        let mut p = self.first.params_mut();
        p.extend(self.second.params_mut());
        (p, &mut self.crf)
    }

    fn encode(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId, masks: &mut Option<&mut MaskStream>) -> Result<NodeId, TaggerError> {
        let u = self.first.hidden_size();
        let m = next_mask(masks, u);
        let h = self.first.run(tape, &ids[..GruCell::PARAMS], x, false, m)?;
        let out = next_mask(masks, u);
        let h = masked(tape, h, out)?;
        let m = next_mask(masks, u);
        self.second.run(tape, &ids[GruCell::PARAMS..], h, false, m)
    }

    fn crf(&self) -> &CrfLayer {
        &self.crf
    }

    fn rate(&self) -> f64 {
        self.dropout
    }
}

/// Two bi-directional GRUs.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleTaskBiGru {
    pub first: BiGruLayer,
    pub second: BiGruLayer,
    pub crf: CrfLayer,
    pub dropout: f64,
}

impl SingleTaskBiGru {
    pub fn new(input: usize, hidden: usize, k: usize, dropout: f64, seed: u64) -> Result<Self, TaggerError> {
        validate_dropout(dropout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            first: BiGruLayer::new(input, hidden, &mut rng),
            second: BiGruLayer::new(2 * hidden, hidden, &mut rng),
            crf: CrfLayer::new(2 * hidden, k, &mut rng),
            dropout,
        })
    }
}

impl Encoder for SingleTaskBiGru {
    fn encoder_params(&self) -> Vec<&Matrix> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }

    fn split_mut(&mut self) -> (Vec<&mut Matrix>, &mut CrfLayer) {
        let mut p = self.first.params_mut();
        p.extend(self.second.params_mut());
        (p, &mut self.crf)
    }

    fn encode(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId, masks: &mut Option<&mut MaskStream>) -> Result<NodeId, TaggerError> {
        let u = self.first.hidden_size();
        let m = [next_mask(masks, u), next_mask(masks, u)];
        let h = self.first.run(tape, &ids[..BiGruLayer::PARAMS], x, m)?;
        let out = next_mask(masks, 2 * u);
        let h = masked(tape, h, out)?;
        let m = [next_mask(masks, u), next_mask(masks, u)];
        self.second.run(tape, &ids[BiGruLayer::PARAMS..], h, m)
    }

    fn crf(&self) -> &CrfLayer {
        &self.crf
    }

    fn rate(&self) -> f64 {
        self.dropout
    }
}

/// A bi-GRU followed by a uni-GRU: one task of the joint model trained on
/// its own. Sequential pipelines widen its input with previous predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedTagger {
    pub bi: BiGruLayer,
    pub uni: GruCell,
    pub crf: CrfLayer,
    pub dropout: f64,
}

impl StackedTagger {
    pub fn new(input: usize, hidden: usize, k: usize, dropout: f64, seed: u64) -> Result<Self, TaggerError> {
        validate_dropout(dropout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            bi: BiGruLayer::new(input, hidden, &mut rng),
            uni: GruCell::new(2 * hidden, hidden, &mut rng),
            crf: CrfLayer::new(hidden, k, &mut rng),
            dropout,
        })
    }
}

impl Encoder for StackedTagger {
    fn encoder_params(&self) -> Vec<&Matrix> {
        let mut p = self.bi.params();
        p.extend(self.uni.params());
        p
    }

    fn split_mut(&mut self) -> (Vec<&mut Matrix>, &mut CrfLayer) {
        let mut p = self.bi.params_mut();
        p.extend(self.uni.params_mut());
        (p, &mut self.crf)
    }

    fn encode(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId, masks: &mut Option<&mut MaskStream>) -> Result<NodeId, TaggerError> {
        let u = self.uni.hidden_size();
        let m = [next_mask(masks, u), next_mask(masks, u)];
        let h = self.bi.run(tape, &ids[..BiGruLayer::PARAMS], x, m)?;
        let out = next_mask(masks, 2 * u);
        let h = masked(tape, h, out)?;
        let m = next_mask(masks, u);
        self.uni.run(tape, &ids[BiGruLayer::PARAMS..], h, false, m)
    }

    fn crf(&self) -> &CrfLayer {
        &self.crf
    }

    fn rate(&self) -> f64 {
        self.dropout
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Coordinates};

    fn example() -> Example {
        Example {
            x: Matrix::from_rows(&[[0.2, -0.4, 0.1], [0.0, 0.3, 0.5], [-0.6, 0.1, 0.2]]).unwrap(),
            gold: vec![vec![1, 0, 2]],
        }
    }

    fn check_gradients<T: Trainable + Clone>(model: &T) {
        let ex = example();
        let (_, analytic) = model.loss_with_grads(&ex, None).unwrap();
        let mut params: Vec<Matrix> = model.parameters().into_iter().cloned().collect();
        let mut probe = model.clone();
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

    #[test]
    fn variant_gradients() {
        check_gradients(&CrfOnly::new(3, 3, 0.5, 1).unwrap());
        check_gradients(&SingleTaskUniGru::new(3, 2, 3, 0.5, 1).unwrap());
        check_gradients(&SingleTaskBiGru::new(3, 2, 3, 0.5, 1).unwrap());
        check_gradients(&StackedTagger::new(3, 2, 3, 0.5, 1).unwrap());
    }

    #[test]
    fn parameter_lists_line_up() {
        let mut m = SingleTaskBiGru::new(3, 2, 3, 0.0, 1).unwrap();
        let shapes: Vec<(usize, usize)> = m.parameters().iter().map(|p| p.shape()).collect();
        let shapes_mut: Vec<(usize, usize)> = m.parameters_mut().iter().map(|p| p.shape()).collect();
        assert_eq!(shapes, shapes_mut);
        assert_eq!(shapes.len(), 2 * BiGruLayer::PARAMS + CrfLayer::PARAMS);
    }

    #[test]
    fn decode_gives_one_sequence() {
        let m = StackedTagger::new(3, 2, 3, 0.0, 1).unwrap();
        let d = m.decode(&example().x).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].len(), 3);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("LSTM".parse::<Variant>().is_err());
    }
}
