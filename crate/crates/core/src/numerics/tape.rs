//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every primitive appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse insertion order, which is a valid reverse
//! topological order because inputs always precede their consumers.
//!
//! Nodes that cannot reach a trainable leaf (constants, embeddings, masks) are
//! flagged at construction time and skipped during the backward sweep.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::matrix::{matmul, matmul_at_into, matmul_bt_into};
use super::{Matrix, NumericsError};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: usize,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

enum Value<'a> {
    Owned(Matrix),
    Borrowed(&'a Matrix),
}

impl Value<'_> {
    fn get(&self) -> &Matrix {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// `n × m` plus a broadcast `1 × m` row.
    AddRow(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows { src: usize, start: usize },
    SliceCols { src: usize, start: usize },
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    LogSumExpRows(usize),
    Scale(usize, f64),
    Mask(usize, Matrix),
    Sum(usize),
    /// Scalar-valued function with precomputed partial derivatives.
    ScalarFn(Vec<(usize, Matrix)>),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    needs_grad: bool,
}

/// Records primitive applications for one forward pass.
///
/// A tape is single-threaded. Parameters are borrowed rather than copied, so
/// the tape lives no longer than the model it was built from.
pub struct Tape<'a> {
    id: usize,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'a>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, id: NodeId) -> Result<usize, NumericsError> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(NumericsError::ForeignNode);
        }
        Ok(id.index)
    }

    fn val(&self, i: usize) -> &Matrix {
        self.nodes[i].value.get()
    }

    fn grad_flag(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// Trainable leaf borrowed from the caller.
    pub fn param(&mut self, m: &'a Matrix) -> NodeId {
        self.push(Value::Borrowed(m), Op::Leaf, true)
    }

    /// Trainable leaf owned by the tape.
    pub fn var(&mut self, m: Matrix) -> NodeId {
        self.push(Value::Owned(m), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> NodeId {
        self.push(Value::Owned(m), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, m: &'a Matrix) -> NodeId {
        self.push(Value::Borrowed(m), Op::Leaf, false)
    }

    /// Forward value of a node.
    ///
    /// # Panics
    /// If `id` belongs to a different tape.
    pub fn value(&self, id: NodeId) -> &Matrix {
        let i = self.idx(id).expect("node from another tape");
        self.val(i)
    }

    fn unary(&mut self, id: NodeId, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<NodeId, NumericsError> {
        let a = self.idx(id)?;
        let out = self.val(a).map(f);
        let g = self.grad_flag(&[a]);
        Ok(self.push(Value::Owned(out), op(a), g))
    }

    fn same_shape(&self, name: &'static str, a: usize, b: usize) -> Result<(), NumericsError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(NumericsError::shape(name, sa, sb));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, x: NodeId, y: NodeId, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<NodeId, NumericsError> {
        let (a, b) = (self.idx(x)?, self.idx(y)?);
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.val(a), self.val(b));
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Matrix::new(va.rows(), va.cols(), data)?;
        let g = self.grad_flag(&[a, b]);
        Ok(self.push(Value::Owned(out), op(a, b), g))
    }

    pub fn matmul(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, NumericsError> {
        let (a, b) = (self.idx(x)?, self.idx(y)?);
        let (va, vb) = (self.val(a), self.val(b));
        if va.cols() != vb.rows() {
            return Err(NumericsError::shape("matmul", va.shape(), vb.shape()));
        }
        let out = matmul(va, vb);
        let g = self.grad_flag(&[a, b]);
        Ok(self.push(Value::Owned(out), Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, NumericsError> {
        self.zip("add", x, y, |p, q| p + q, Op::Add)
    }

    pub fn sub(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, NumericsError> {
        self.zip("sub", x, y, |p, q| p - q, Op::Sub)
    }

    pub fn hadamard(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, NumericsError> {
        self.zip("hadamard", x, y, |p, q| p * q, Op::Hadamard)
    }

    /// Adds the `1 × m` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let (a, b) = (self.idx(x)?, self.idx(bias)?);
        let (va, vb) = (self.val(a), self.val(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(NumericsError::shape("add_row", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        let g = self.grad_flag(&[a, b]);
        Ok(self.push(Value::Owned(out), Op::AddRow(a, b), g))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>, _>>()?;
        let first = *idx.first().ok_or(NumericsError::EmptyConcat)?;
        let rows = self.val(first).rows();
        for &i in &idx {
            if self.val(i).rows() != rows {
                return Err(NumericsError::shape("concat_cols", self.val(first).shape(), self.val(i).shape()));
            }
        }
        let cols: usize = idx.iter().map(|&i| self.val(i).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.val(i).row(r));
            }
        }
        let out = Matrix::new(rows, cols, data)?;
        let g = self.grad_flag(&idx);
        Ok(self.push(Value::Owned(out), Op::ConcatCols(idx), g))
    }

    /// Vertical stacking of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>, _>>()?;
        let first = *idx.first().ok_or(NumericsError::EmptyConcat)?;
        let cols = self.val(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idx {
            let v = self.val(i);
            if v.cols() != cols {
                return Err(NumericsError::shape("concat_rows", self.val(first).shape(), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Matrix::new(rows, cols, data)?;
        let g = self.grad_flag(&idx);
        Ok(self.push(Value::Owned(out), Op::ConcatRows(idx), g))
    }

    /// Rows `start..start + count`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, count: usize) -> Result<NodeId, NumericsError> {
        let a = self.idx(x)?;
        let v = self.val(a);
        if start + count > v.rows() || count == 0 {
            return Err(NumericsError::Slice {
                op: "slice_rows",
                start,
                count,
                shape: v.shape(),
            });
        }
        let cols = v.cols();
        let out = Matrix::new(count, cols, v.data()[start * cols..(start + count) * cols].to_vec())?;
        let g = self.grad_flag(&[a]);
        Ok(self.push(Value::Owned(out), Op::SliceRows { src: a, start }, g))
    }

    /// Columns `start..start + count`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, count: usize) -> Result<NodeId, NumericsError> {
        let a = self.idx(x)?;
        let v = self.val(a);
        if start + count > v.cols() || count == 0 {
            return Err(NumericsError::Slice {
                op: "slice_cols",
                start,
                count,
                shape: v.shape(),
            });
        }
        let mut data = Vec::with_capacity(v.rows() * count);
        for r in 0..v.rows() {
            data.extend_from_slice(&v.row(r)[start..start + count]);
        }
        let out = Matrix::new(v.rows(), count, data)?;
        let g = self.grad_flag(&[a]);
        Ok(self.push(Value::Owned(out), Op::SliceCols { src: a, start }, g))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        self.unary(x, f64::tanh, Op::Tanh)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        self.unary(x, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        self.unary(x, f64::ln, Op::Log)
    }

    /// Row-wise log-sum-exp; `n × m` becomes `n × 1`.
    pub fn logsumexp_rows(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let a = self.idx(x)?;
        let v = self.val(a);
        let data = (0..v.rows()).map(|r| logsumexp(v.row(r))).collect();
        let out = Matrix::new(v.rows(), 1, data)?;
        let g = self.grad_flag(&[a]);
        Ok(self.push(Value::Owned(out), Op::LogSumExpRows(a), g))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, NumericsError> {
        let a = self.idx(x)?;
        let out = self.val(a).map(|v| v * factor);
        let g = self.grad_flag(&[a]);
        Ok(self.push(Value::Owned(out), Op::Scale(a, factor), g))
    }

    /// Elementwise product with a constant mask (dropout application).
    pub fn apply_mask(&mut self, x: NodeId, mask: Matrix) -> Result<NodeId, NumericsError> {
        let a = self.idx(x)?;
        let v = self.val(a);
        let out = if mask.rows() == 1 && v.rows() != 1 && mask.cols() == v.cols() {
            // one mask row shared by every time step
            let mut out = v.clone();
            for r in 0..out.rows() {
                for (o, &m) in out.row_mut(r).iter_mut().zip(mask.data()) {
                    *o *= m;
                }
            }
            out
        } else if mask.shape() == v.shape() {
            let data = v.data().iter().zip(mask.data()).map(|(p, q)| p * q).collect();
            Matrix::new(v.rows(), v.cols(), data)?
        } else {
            return Err(NumericsError::shape("apply_mask", v.shape(), mask.shape()));
        };
        let g = self.grad_flag(&[a]);
        Ok(self.push(Value::Owned(out), Op::Mask(a, mask), g))
    }

    /// Sum of all elements as a `1 × 1` node.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let a = self.idx(x)?;
        let out = Matrix::scalar(self.val(a).sum());
        let g = self.grad_flag(&[a]);
        Ok(self.push(Value::Owned(out), Op::Sum(a), g))
    }

    /// Records a scalar function of several inputs whose value and partial
    /// derivatives were computed outside the tape.
    pub fn scalar_fn(&mut self, value: f64, partials: Vec<(NodeId, Matrix)>) -> Result<NodeId, NumericsError> {
        let mut resolved = Vec::with_capacity(partials.len());
        for (id, d) in partials {
            let i = self.idx(id)?;
            if self.val(i).shape() != d.shape() {
                return Err(NumericsError::shape("scalar_fn", self.val(i).shape(), d.shape()));
            }
            resolved.push((i, d));
        }
        let inputs: Vec<usize> = resolved.iter().map(|(i, _)| *i).collect();
        let g = self.grad_flag(&inputs);
        Ok(self.push(Value::Owned(Matrix::scalar(value)), Op::ScalarFn(resolved), g))
    }

    /// Propagates `d loss / d node` from a scalar `loss` back to every node,
    /// seeding with 1.0.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumericsError> {
        let root = self.idx(loss)?;
        let shape = self.val(root).shape();
        if shape != (1, 1) {
            return Err(NumericsError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Matrix::scalar(1.0));

        for i in (0..=root).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        // leaves that were never reached still get a zero gradient
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && grads[i].is_none() {
                let (r, c) = node.value.get().shape();
                grads[i] = Some(Matrix::zeros(r, c));
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let out = node.value.get();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                if self.nodes[*a].needs_grad {
                    let acc = slot(grads, *a, va.shape());
                    matmul_bt_into(g, vb, acc);
                }
                if self.nodes[*b].needs_grad {
                    let acc = slot(grads, *b, vb.shape());
                    matmul_at_into(va, g, acc);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.data().iter().copied());
                self.accumulate(grads, *b, g.data().iter().copied());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.data().iter().copied());
                self.accumulate(grads, *b, g.data().iter().map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                self.accumulate(grads, *a, g.data().iter().zip(vb.data()).map(|(x, y)| x * y));
                self.accumulate(grads, *b, g.data().iter().zip(va.data()).map(|(x, y)| x * y));
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.data().iter().copied());
                if self.nodes[*b].needs_grad {
                    let acc = slot(grads, *b, self.val(*b).shape());
                    for r in 0..g.rows() {
                        for (o, &x) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.val(p).cols();
                    if self.nodes[p].needs_grad {
                        let acc = slot(grads, p, self.val(p).shape());
                        for r in 0..g.rows() {
                            for (o, &x) in acc.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += x;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.val(p).len();
                    self.accumulate(grads, p, g.data()[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::SliceRows { src, start } => {
                if self.nodes[*src].needs_grad {
                    let cols = g.cols();
                    let acc = slot(grads, *src, self.val(*src).shape());
                    let dst = &mut acc.data_mut()[start * cols..(start + g.rows()) * cols];
                    for (o, &x) in dst.iter_mut().zip(g.data()) {
                        *o += x;
                    }
                }
            }
            Op::SliceCols { src, start } => {
                if self.nodes[*src].needs_grad {
                    let acc = slot(grads, *src, self.val(*src).shape());
                    for r in 0..g.rows() {
                        for (o, &x) in acc.row_mut(r)[*start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.data().iter().zip(out.data()).map(|(x, y)| x * y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.data().iter().zip(out.data()).map(|(x, y)| x * (1.0 - y * y)));
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, g.data().iter().zip(out.data()).map(|(x, y)| x * y));
            }
            Op::Log(a) => {
                let va = self.val(*a);
                self.accumulate(grads, *a, g.data().iter().zip(va.data()).map(|(x, y)| x / y));
            }
            Op::LogSumExpRows(a) => {
                if self.nodes[*a].needs_grad {
                    let va = self.val(*a);
                    let acc = slot(grads, *a, va.shape());
                    for r in 0..va.rows() {
                        let (gr, lse) = (g.get(r, 0), out.get(r, 0));
                        for (o, &x) in acc.row_mut(r).iter_mut().zip(va.row(r)) {
                            *o += gr * (x - lse).exp();
                        }
                    }
                }
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, g.data().iter().map(|x| x * factor));
            }
            Op::Mask(a, mask) => {
                if self.nodes[*a].needs_grad {
                    let acc = slot(grads, *a, self.val(*a).shape());
                    let cols = acc.cols();
                    for (k, (o, &x)) in acc.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let m = if mask.len() == cols { mask.data()[k % cols] } else { mask.data()[k] };
                        *o += x * m;
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                self.accumulate(grads, *a, std::iter::repeat(s));
            }
            Op::ScalarFn(partials) => {
                let s = g.data()[0];
                for (a, d) in partials {
                    self.accumulate(grads, *a, d.data().iter().map(|x| x * s));
                }
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], target: usize, values: impl Iterator<Item = f64>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let acc = slot(grads, target, self.val(target).shape());
        for (o, x) in acc.data_mut().iter_mut().zip(values) {
            *o += x;
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], i: usize, shape: (usize, usize)) -> &mut Matrix {
    grads[i].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

/// Result of a backward sweep.
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get(id.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get_mut(id.index).and_then(Option::take)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted log-sum-exp; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert!((logsumexp(&[0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(sigmoid(0.0), 0.5);
        let mut t = Tape::new();
        let x = t.constant(Matrix::row_vector(vec![0.0, 0.0]));
        let l = t.logsumexp_rows(x).unwrap();
        assert!((t.value(l).get(0, 0) - 0.693147).abs() < 1e-6);
        let s = t.sigmoid(x).unwrap();
        let h = t.tanh(x).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);
        assert_eq!(t.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn logsumexp_is_stable_for_large_inputs() {
        let v = logsumexp(&[1000.0, 1000.0, -1000.0]);
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-9);
        assert!(logsumexp(&[-1e3, -1e3]).is_finite());
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let mut t = Tape::new();
        let x = t.var(m);
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.var(Matrix::scalar(3.0));
        let y = t.var(Matrix::scalar(-2.0));
        let p = t.hadamard(x, y).unwrap();
        let g = t.backward(p).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[-2.0]);
        assert_eq!(g.get(y).unwrap().data(), &[3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.var(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(NumericsError::NonScalarLoss { .. })));
    }

    #[test]
    fn loss_from_other_tape_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.var(Matrix::scalar(1.0));
        let _ = b.var(Matrix::scalar(1.0));
        assert!(matches!(b.backward(x), Err(NumericsError::ForeignNode)));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(2.0));
        let x = t.var(Matrix::scalar(5.0));
        let p = t.hadamard(c, x).unwrap();
        let g = t.backward(p).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.var(Matrix::scalar(1.0));
        let unused = t.var(Matrix::zeros(2, 3));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Matrix::zeros(2, 3));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.var(Matrix::zeros(2, 3));
        let b = t.var(Matrix::zeros(3, 2));
        let err = t.add(a, b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("3x2"), "{err}");
    }
}
