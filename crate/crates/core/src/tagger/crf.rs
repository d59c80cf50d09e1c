//! Linear-chain CRF with START/STOP boundary states.
//!
//! Transitions `A` are `(k+2) x (k+2)`: index `k` is START and `k+1` is STOP.
//! Entries into START and out of STOP are `-inf`, so no sequence uses them.

use rand::Rng;

use super::{glorot, TaggerError};
use crate::numerics::{logsumexp, Matrix, NodeId, Tape};

/// Emission projection plus transition matrix for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfLayer {
    pub transitions: Matrix,
    /// `features x k`.
    pub weight: Matrix,
    /// `1 x k`.
    pub bias: Matrix,
}

impl CrfLayer {
    pub const PARAMS: usize = 3;

    pub fn new<R: Rng>(features: usize, k: usize, rng: &mut R) -> Self {
        Self {
            transitions: masked_transitions(k),
            weight: glorot(features, k, rng),
            bias: Matrix::zeros(1, k),
        }
    }

    pub fn k(&self) -> usize {
        self.bias.cols()
    }

    pub fn features(&self) -> usize {
        self.weight.rows()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.transitions, &self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.transitions, &mut self.weight, &mut self.bias]
    }

    /// `G = F W + b` on the tape; `ids` are this layer's parameter nodes.
    pub(crate) fn emissions(&self, tape: &mut Tape, ids: &[NodeId], features: NodeId) -> Result<NodeId, TaggerError> {
        let proj = tape.matmul(features, ids[1])?;
        Ok(tape.add_row(proj, ids[2])?)
    }
}

/// Zero transitions with the boundary entries masked to `-inf`.
pub fn masked_transitions(k: usize) -> Matrix {
    let mut a = Matrix::zeros(k + 2, k + 2);
    for i in 0..k + 2 {
        a.set(i, k, f64::NEG_INFINITY);
        a.set(k + 1, i, f64::NEG_INFINITY);
    }
    a
}

fn check(a: &Matrix, g: &Matrix) -> Result<usize, TaggerError> {
    let k = g.cols();
    if g.rows() == 0 {
        return Err(TaggerError::EmptyQuery);
    }
    if a.shape() != (k + 2, k + 2) {
        return Err(crate::numerics::NumericsError::Shape {
            op: "crf",
            lhs: a.shape(),
            rhs: g.shape(),
        }
        .into());
    }
    Ok(k)
}

fn check_tags(y: &[usize], n: usize, k: usize) -> Result<(), TaggerError> {
    if y.len() != n {
        return Err(TaggerError::LengthMismatch { tokens: n, tags: y.len() });
    }
    match y.iter().find(|&&t| t >= k) {
        Some(&index) => Err(TaggerError::TagIndex { index, k }),
        None => Ok(()),
    }
}

/// `A[START, y1] + sum G[i, yi] + sum A[yi, yi+1] + A[yn, STOP]`.
pub fn crf_score(a: &Matrix, g: &Matrix, y: &[usize]) -> Result<f64, TaggerError> {
    let k = check(a, g)?;
    check_tags(y, g.rows(), k)?;
    let mut s = a.get(k, y[0]);
    for (i, &t) in y.iter().enumerate() {
        s += g.get(i, t);
        if i + 1 < y.len() {
            s += a.get(t, y[i + 1]);
        }
    }
    Ok(s + a.get(y[y.len() - 1], k + 1))
}

/// Forward log-scores: `alpha[i][j]` over prefixes ending in tag `j` at `i`.
fn forward(a: &Matrix, g: &Matrix, k: usize) -> Vec<Vec<f64>> {
    let n = g.rows();
    let mut alpha = vec![vec![0.0; k]; n];
    for j in 0..k {
        alpha[0][j] = a.get(k, j) + g.get(0, j);
    }
    let mut buf = vec![0.0; k];
    for i in 1..n {
        for j in 0..k {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = alpha[i - 1][p] + a.get(p, j);
            }
            alpha[i][j] = g.get(i, j) + logsumexp(&buf);
        }
    }
    alpha
}

/// Log-sum over every tag sequence of `exp(score)`.
pub fn crf_log_partition(a: &Matrix, g: &Matrix) -> Result<f64, TaggerError> {
    let k = check(a, g)?;
    let alpha = forward(a, g, k);
    let last = &alpha[g.rows() - 1];
    let ends: Vec<f64> = (0..k).map(|j| last[j] + a.get(j, k + 1)).collect();
    Ok(logsumexp(&ends))
}

/// `log Z - score(gold)`.
pub fn crf_nll(a: &Matrix, g: &Matrix, y: &[usize]) -> Result<f64, TaggerError> {
    Ok(crf_log_partition(a, g)? - crf_score(a, g, y)?)
}

/// Posterior expectations under the CRF.
pub struct Marginals {
    pub log_partition: f64,
    /// `P(y_i = j)`, `n x k`.
    pub unary: Matrix,
    /// Expected usage count of every transition, `(k+2) x (k+2)`.
    pub transitions: Matrix,
}

pub fn crf_marginals(a: &Matrix, g: &Matrix) -> Result<Marginals, TaggerError> {
    let k = check(a, g)?;
    let n = g.rows();
    let alpha = forward(a, g, k);
    let mut beta = vec![vec![0.0; k]; n];
    for j in 0..k {
        beta[n - 1][j] = a.get(j, k + 1);
    }
    let mut buf = vec![0.0; k];
    for i in (0..n - 1).rev() {
        for j in 0..k {
            for (q, b) in buf.iter_mut().enumerate() {
                *b = a.get(j, q) + g.get(i + 1, q) + beta[i + 1][q];
            }
            beta[i][j] = logsumexp(&buf);
        }
    }
    let ends: Vec<f64> = (0..k).map(|j| alpha[n - 1][j] + a.get(j, k + 1)).collect();
    let log_z = logsumexp(&ends);

    let mut unary = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            unary.set(i, j, (alpha[i][j] + beta[i][j] - log_z).exp());
        }
    }
    let mut trans = Matrix::zeros(k + 2, k + 2);
    for j in 0..k {
        trans.set(k, j, unary.get(0, j));
        trans.set(j, k + 1, unary.get(n - 1, j));
    }
    for i in 0..n - 1 {
        for p in 0..k {
            for q in 0..k {
                let lp = alpha[i][p] + a.get(p, q) + g.get(i + 1, q) + beta[i + 1][q] - log_z;
                trans.set(p, q, trans.get(p, q) + lp.exp());
            }
        }
    }
    Ok(Marginals {
        log_partition: log_z,
        unary,
        transitions: trans,
    })
}

/// Highest-scoring sequence and its score. Ties go to the lowest tag index.
pub fn viterbi_decode(a: &Matrix, g: &Matrix) -> Result<(Vec<usize>, f64), TaggerError> {
    let k = check(a, g)?;
    let n = g.rows();
    let mut delta = vec![vec![0.0; k]; n];
    let mut back = vec![vec![0usize; k]; n];
    for j in 0..k {
        delta[0][j] = a.get(k, j) + g.get(0, j);
    }
    for i in 1..n {
        for j in 0..k {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for p in 0..k {
                let v = delta[i - 1][p] + a.get(p, j);
                if v > best {
                    best = v;
                    arg = p;
                }
            }
            delta[i][j] = best + g.get(i, j);
            back[i][j] = arg;
        }
    }
    let (mut best, mut last) = (f64::NEG_INFINITY, 0);
    for j in 0..k {
        let v = delta[n - 1][j] + a.get(j, k + 1);
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut path = vec![last; n];
    for i in (1..n).rev() {
        path[i - 1] = back[i][path[i]];
    }
    Ok((path, best))
}

/// Records `crf_nll` as a tape node with gradients
/// `dG = P(y_i = j) - [gold]` and `dA = E[count] - gold count`.
pub(crate) fn nll_node(tape: &mut Tape, g: NodeId, a: NodeId, gold: &[usize]) -> Result<NodeId, TaggerError> {
    let gv = tape.value(g);
    let av = tape.value(a);
    let k = check(av, gv)?;
    check_tags(gold, gv.rows(), k)?;
    let m = crf_marginals(av, gv)?;
    let score = crf_score(av, gv, gold)?;
    let mut dg = m.unary;
    let mut da = m.transitions;
    for (i, &t) in gold.iter().enumerate() {
        dg.set(i, t, dg.get(i, t) - 1.0);
        let next = gold.get(i + 1).copied().unwrap_or(k + 1);
        da.set(t, next, da.get(t, next) - 1.0);
    }
    da.set(k, gold[0], da.get(k, gold[0]) - 1.0);
    Ok(tape.scalar_fn(m.log_partition - score, vec![(g, dg), (a, da)])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Coordinates};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, k: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = masked_transitions(k);
        for i in 0..k + 2 {
            for j in 0..k + 2 {
                if a.get(i, j).is_finite() {
                    a.set(i, j, rng.random_range(-2.0..2.0));
                }
            }
        }
        let g = Matrix::new(n, k, (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        (a, g)
    }

    /// Every sequence in `0..k` of length `n`, lexicographic.
    fn all_sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p: Vec<usize>| (0..k).map(move |t| [p.clone(), vec![t]].concat()))
                .collect();
        }
        out
    }

    /// Score by explicit term listing, independent of `crf_score`.
    fn oracle_score(a: &Matrix, g: &Matrix, y: &[usize]) -> f64 {
        let k = g.cols();
        let mut path = vec![k];
        path.extend_from_slice(y);
        path.push(k + 1);
        let emit: f64 = y.iter().enumerate().map(|(i, &t)| g.get(i, t)).sum();
        let trans: f64 = path.windows(2).map(|w| a.get(w[0], w[1])).sum();
        emit + trans
    }

    fn oracle_log_z(a: &Matrix, g: &Matrix) -> f64 {
        let scores: Vec<f64> = all_sequences(g.rows(), g.cols()).iter().map(|y| oracle_score(a, g, y)).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn score_closed_forms() {
        let a = Matrix::zeros(5, 5);
        let g = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(crf_score(&a, &g, &[2, 0]).unwrap(), 3.0 + 4.0);
        let mut a = masked_transitions(3);
        a.set(3, 1, 0.25);
        a.set(1, 4, -1.5);
        assert_eq!(crf_score(&a, &Matrix::zeros(1, 3), &[1]).unwrap(), 0.25 - 1.5);
    }

    #[test]
    fn score_errors() {
        let a = masked_transitions(3);
        let g = Matrix::zeros(2, 3);
        assert_eq!(crf_score(&a, &g, &[0, 3]), Err(TaggerError::TagIndex { index: 3, k: 3 }));
        assert!(matches!(crf_score(&a, &g, &[0]), Err(TaggerError::LengthMismatch { .. })));
        assert!(crf_score(&masked_transitions(2), &g, &[0, 0]).is_err());
    }

    #[test]
    fn score_matches_oracle() {
        let (a, g) = random(4, 3, 9);
        for y in all_sequences(4, 3) {
            assert!((crf_score(&a, &g, &y).unwrap() - oracle_score(&a, &g, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn log_partition_closed_forms() {
        let a = masked_transitions(3);
        let z = crf_log_partition(&a, &Matrix::zeros(2, 3)).unwrap();
        assert!((z - 9f64.ln()).abs() < 1e-12);
        assert!((z - 2.19722).abs() < 1e-5);
        let g = Matrix::row_vector(vec![0.3, -1.0, 2.0]);
        assert!((crf_log_partition(&a, &g).unwrap() - logsumexp(g.data())).abs() < 1e-12);
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let (a, g) = random(5, 4, 1);
        assert!((crf_log_partition(&a, &g).unwrap() - oracle_log_z(&a, &g)).abs() < 1e-8);
    }

    #[test]
    fn single_tag_nll() {
        let a = masked_transitions(1);
        let g = Matrix::from_rows(&[[0.7], [-3.0], [2.0]]).unwrap();
        assert!(crf_nll(&a, &g, &[0, 0, 0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nll_is_negative_log_probability() {
        let (a, g) = random(4, 3, 5);
        let z = oracle_log_z(&a, &g);
        let y = [2, 0, 1, 1];
        let p = (oracle_score(&a, &g, &y) - z).exp();
        assert!((crf_nll(&a, &g, &y).unwrap() + p.ln()).abs() < 1e-10);
    }

    #[test]
    fn confident_gold_has_small_loss() {
        let a = masked_transitions(3);
        let g = Matrix::from_rows(&[[20.0, 0.0, 0.0], [0.0, 0.0, 20.0]]).unwrap();
        let (path, _) = viterbi_decode(&a, &g).unwrap();
        assert_eq!(path, [0, 2]);
        let l = crf_nll(&a, &g, &path).unwrap();
        assert!((0.0..1e-6).contains(&l), "{l}");
    }

    #[test]
    fn viterbi_trivial_cases() {
        let a = masked_transitions(3);
        let g = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(viterbi_decode(&a, &g).unwrap().0, [1, 0, 2]);
        let one = masked_transitions(1);
        assert_eq!(viterbi_decode(&one, &Matrix::zeros(4, 1)).unwrap().0, [0, 0, 0, 0]);
        // all ties: lowest index everywhere
        assert_eq!(viterbi_decode(&a, &Matrix::zeros(3, 3)).unwrap(), (vec![0, 0, 0], 0.0));
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let (a, g) = random(6, 5, 3);
        let (path, score) = viterbi_decode(&a, &g).unwrap();
        let best = all_sequences(6, 5)
            .into_iter()
            .map(|y| (oracle_score(&a, &g, &y), y))
            .fold((f64::NEG_INFINITY, vec![]), |acc, (s, y)| if s > acc.0 { (s, y) } else { acc });
        assert!((score - best.0).abs() < 1e-10);
        assert_eq!(path, best.1);
    }

    #[test]
    fn marginals_match_enumeration() {
        let (a, g) = random(3, 3, 8);
        let m = crf_marginals(&a, &g).unwrap();
        let z = oracle_log_z(&a, &g);
        let mut unary = Matrix::zeros(3, 3);
        for y in all_sequences(3, 3) {
            let p = (oracle_score(&a, &g, &y) - z).exp();
            for (i, &t) in y.iter().enumerate() {
                unary.set(i, t, unary.get(i, t) + p);
            }
        }
        assert!(m.unary.max_abs_diff(&unary) < 1e-12);
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let (a, g) = random(4, 3, 21);
        let gold = [1, 2, 2, 0];
        let mut tape = Tape::new();
        let gn = tape.var(g.clone());
        let an = tape.var(a.clone());
        let loss = nll_node(&mut tape, gn, an, &gold).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = vec![grads.get(gn).unwrap().clone(), grads.get(an).unwrap().clone()];
        let mut params = vec![g, a];
        let r = finite_diff_check(
            |p| crf_nll(&p[1], &p[0], &gold).unwrap(),
            &mut params,
            &analytic,
            1e-5,
            Coordinates::All,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
        // masked entries get no gradient
        assert_eq!(analytic[1].get(0, 3), 0.0);
        assert_eq!(analytic[1].get(4, 0), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn probabilities_sum_to_one(n in 1usize..=5, k in 1usize..=4, seed in any::<u64>()) {
            let (a, g) = random(n, k, seed);
            let z = crf_log_partition(&a, &g).unwrap();
            let total: f64 = all_sequences(n, k).iter().map(|y| (crf_score(&a, &g, y).unwrap() - z).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-8);
        }

        #[test]
        fn viterbi_score_is_enumeration_max(n in 1usize..=5, k in 1usize..=4, seed in any::<u64>()) {
            let (a, g) = random(n, k, seed);
            let (path, score) = viterbi_decode(&a, &g).unwrap();
            let max = all_sequences(n, k).iter().map(|y| oracle_score(&a, &g, y)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((score - max).abs() < 1e-10);
            prop_assert!((crf_score(&a, &g, &path).unwrap() - score).abs() < 1e-10);
        }

        #[test]
        fn row_shift_invariance(n in 1usize..=5, k in 1usize..=4, seed in any::<u64>(), row in any::<prop::sample::Index>(), c in -5.0f64..5.0) {
            let (a, g) = random(n, k, seed);
            let r = row.index(n);
            let mut shifted = g.clone();
            shifted.row_mut(r).iter_mut().for_each(|v| *v += c);
            let dz = crf_log_partition(&a, &shifted).unwrap() - crf_log_partition(&a, &g).unwrap();
            prop_assert!((dz - c).abs() < 1e-9);
            prop_assert_eq!(viterbi_decode(&a, &g).unwrap().0, viterbi_decode(&a, &shifted).unwrap().0);
        }

        #[test]
        fn nll_is_non_negative(n in 1usize..=5, k in 1usize..=4, seed in any::<u64>(), tags in proptest::collection::vec(0usize..4, 5)) {
            let (a, g) = random(n, k, seed);
            let y: Vec<usize> = tags[..n].iter().map(|t| t % k).collect();
            prop_assert!(crf_nll(&a, &g, &y).unwrap() >= -1e-12);
        }
    }
}
