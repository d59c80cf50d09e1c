//! Dense matrices, a reverse-mode tape and a finite-difference verifier.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{finite_diff_check, relative_error, Coordinates, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use matrix::Matrix;
pub use tape::{logsumexp, sigmoid, Gradients, NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {}x{} and {}x{}", .lhs.0, .lhs.1, .rhs.0, .rhs.1)]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{len} elements cannot fill a {rows}x{cols} matrix")]
    ElementCount { rows: usize, cols: usize, len: usize },
    #[error("ragged rows: expected {expected} columns, found {found}")]
    RaggedRows { expected: usize, found: usize },
    #[error("{op}: range {start}+{count} outside {}x{}", .shape.0, .shape.1)]
    Slice {
        op: &'static str,
        start: usize,
        count: usize,
        shape: (usize, usize),
    },
    #[error("concatenation of zero matrices")]
    EmptyConcat,
    #[error("loss must be a 1x1 scalar, got {}x{}", .shape.0, .shape.1)]
    NonScalarLoss { shape: (usize, usize) },
    #[error("node does not belong to this tape")]
    ForeignNode,
    #[error("{params} parameters but {grads} gradients")]
    ParamCount { params: usize, grads: usize },
    #[error("objective is not finite when perturbing parameter {param}, element {element}")]
    NonFinite { param: usize, element: usize },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Self::Shape { op, lhs, rhs }
    }
}

#[cfg(test)]
mod vjp_tests {
    //! Every primitive's vector-Jacobian product against central differences.

    use super::*;
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    /// Builds `sum(w ⊙ op(inputs))` so that every output element contributes
    /// with a distinct weight, then checks the gradients of all inputs.
    fn check<F>(inputs: Vec<Matrix>, build: F) -> f64
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let eval = |ps: &[Matrix]| -> (f64, Vec<Matrix>) {
            let mut t = Tape::new();
            let ids: Vec<NodeId> = ps.iter().map(|p| t.param(p)).collect();
            let out = build(&mut t, &ids);
            let shape = t.value(out).shape();
            let w: Vec<f64> = (0..shape.0 * shape.1).map(|i| 0.5 + 0.37 * i as f64).collect();
            let w = t.constant(Matrix::new(shape.0, shape.1, w).unwrap());
            let prod = t.hadamard(out, w).unwrap();
            let loss = t.sum(prod).unwrap();
            let v = t.value(loss).get(0, 0);
            let g = t.backward(loss).unwrap();
            (v, ids.iter().map(|&i| g.get(i).unwrap().clone()).collect())
        };
        let (_, analytic) = eval(&inputs);
        let mut params = inputs;
        finite_diff_check(|ps| eval(ps).0, &mut params, &analytic, 1e-5, Coordinates::All)
            .unwrap()
            .max_relative_error
    }

    const TOL: f64 = 1e-6;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matmul_vjp(a in mat(3, 4), b in mat(4, 2)) {
            prop_assert!(check(vec![a, b], |t, x| t.matmul(x[0], x[1]).unwrap()) < TOL);
        }

        #[test]
        fn add_sub_hadamard_vjp(a in mat(2, 3), b in mat(2, 3)) {
            prop_assert!(check(vec![a.clone(), b.clone()], |t, x| t.add(x[0], x[1]).unwrap()) < TOL);
            prop_assert!(check(vec![a.clone(), b.clone()], |t, x| t.sub(x[0], x[1]).unwrap()) < TOL);
            prop_assert!(check(vec![a, b], |t, x| t.hadamard(x[0], x[1]).unwrap()) < TOL);
        }

        #[test]
        fn add_row_vjp(a in mat(3, 2), b in mat(1, 2)) {
            prop_assert!(check(vec![a, b], |t, x| t.add_row(x[0], x[1]).unwrap()) < TOL);
        }

        #[test]
        fn concat_and_slice_vjp(a in mat(2, 3), b in mat(2, 1), c in mat(1, 3)) {
            prop_assert!(check(vec![a.clone(), b], |t, x| t.concat_cols(&[x[0], x[1]]).unwrap()) < TOL);
            prop_assert!(check(vec![a.clone(), c], |t, x| t.concat_rows(&[x[0], x[1]]).unwrap()) < TOL);
            prop_assert!(check(vec![a.clone()], |t, x| t.slice_rows(x[0], 1, 1).unwrap()) < TOL);
            prop_assert!(check(vec![a], |t, x| t.slice_cols(x[0], 1, 2).unwrap()) < TOL);
        }

        #[test]
        fn elementwise_vjp(a in mat(2, 3)) {
            prop_assert!(check(vec![a.clone()], |t, x| t.sigmoid(x[0]).unwrap()) < TOL);
            prop_assert!(check(vec![a.clone()], |t, x| t.tanh(x[0]).unwrap()) < TOL);
            prop_assert!(check(vec![a.clone()], |t, x| t.exp(x[0]).unwrap()) < TOL);
            prop_assert!(check(vec![a.clone()], |t, x| t.scale(x[0], -1.7).unwrap()) < TOL);
            let shifted = a.map(|v| v.abs() + 0.5);
            prop_assert!(check(vec![shifted], |t, x| t.log(x[0]).unwrap()) < TOL);
        }

        #[test]
        fn logsumexp_and_mask_vjp(a in mat(3, 4)) {
            prop_assert!(check(vec![a.clone()], |t, x| t.logsumexp_rows(x[0]).unwrap()) < TOL);
            let mask = Matrix::row_vector(vec![2.0, 0.0, 2.0, 0.0]);
            prop_assert!(check(vec![a], |t, x| t.apply_mask(x[0], mask.clone()).unwrap()) < TOL);
        }

        #[test]
        fn three_layer_composition(x in mat(2, 3), w1 in mat(3, 4), w2 in mat(4, 4), w3 in mat(4, 1)) {
            let err = check(vec![x, w1, w2, w3], |t, p| {
                let h1 = t.matmul(p[0], p[1]).unwrap();
                let h1 = t.tanh(h1).unwrap();
                let h2 = t.matmul(h1, p[2]).unwrap();
                let h2 = t.sigmoid(h2).unwrap();
                t.matmul(h2, p[3]).unwrap()
            });
            prop_assert!(err < 1e-6, "{}", err);
        }
    }

    #[test]
    fn logsumexp_gradient_finite_at_large_magnitude() {
        let a = Matrix::row_vector(vec![1e3, -1e3, 999.0]);
        let mut t = Tape::new();
        let x = t.var(a);
        let l = t.logsumexp_rows(x).unwrap();
        let s = t.sum(l).unwrap();
        let g = t.backward(s).unwrap();
        assert!(t.value(l).is_finite());
        assert!(g.get(x).unwrap().is_finite());
        assert!((g.get(x).unwrap().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_and_backward_are_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let a = t.var(Matrix::from_rows(&[[0.1, 0.2], [0.3, -0.4]]).unwrap());
            let b = t.tanh(a).unwrap();
            let c = t.matmul(b, a).unwrap();
            let s = t.sum(c).unwrap();
            let g = t.backward(s).unwrap();
            (t.value(s).clone(), g.get(a).unwrap().clone())
        };
        assert_eq!(run(), run());
    }
}
