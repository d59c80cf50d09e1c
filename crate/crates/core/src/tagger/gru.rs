//! Gated recurrent units in row-vector convention: `x` is `1 x in`, input
//! weights are `in x u` and recurrent weights `u x u`.
//!
//! ```text
//! z  = sigmoid(x U_z + h W_z + b_z)
//! r  = sigmoid(x U_r + h W_r + b_r)
//! h~ = tanh(x U_h + (r * h) W_h + b_h)
//! h' = (1 - z) * h + z * h~
//! ```

use rand::Rng;

use super::{glorot, TaggerError};
use crate::numerics::{sigmoid, Matrix, NodeId, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub u_z: Matrix,
    pub w_z: Matrix,
    pub b_z: Matrix,
    pub u_r: Matrix,
    pub w_r: Matrix,
    pub b_r: Matrix,
    pub u_h: Matrix,
    pub w_h: Matrix,
    pub b_h: Matrix,
}

impl GruCell {
    pub const PARAMS: usize = 9;

    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            u_z: glorot(input, hidden, rng),
            w_z: glorot(hidden, hidden, rng),
            b_z: Matrix::zeros(1, hidden),
            u_r: glorot(input, hidden, rng),
            w_r: glorot(hidden, hidden, rng),
            b_r: Matrix::zeros(1, hidden),
            u_h: glorot(input, hidden, rng),
            w_h: glorot(hidden, hidden, rng),
            b_h: Matrix::zeros(1, hidden),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let (i, h) = (Matrix::zeros(input, hidden), Matrix::zeros(hidden, hidden));
        let b = Matrix::zeros(1, hidden);
        Self {
            u_z: i.clone(),
            w_z: h.clone(),
            b_z: b.clone(),
            u_r: i.clone(),
            w_r: h.clone(),
            b_r: b.clone(),
            u_h: i,
            w_h: h,
            b_h: b,
        }
    }

    pub fn input_size(&self) -> usize {
        self.u_z.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.u_z.cols()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.u_z, &self.w_z, &self.b_z, &self.u_r, &self.w_r, &self.b_r, &self.u_h, &self.w_h, &self.b_h]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.u_z,
            &mut self.w_z,
            &mut self.b_z,
            &mut self.u_r,
            &mut self.w_r,
            &mut self.b_r,
            &mut self.u_h,
            &mut self.w_h,
            &mut self.b_h,
        ]
    }

    /// Runs the cell over the rows of `x` (reversed when `reverse`) and
    /// returns the `n x u` states in input row order. `rec_mask` (`1 x u`)
    /// drops the previous state wherever it feeds a gate.
    pub(crate) fn run(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        x: NodeId,
        reverse: bool,
        rec_mask: Option<Matrix>,
    ) -> Result<NodeId, TaggerError> {
        let [u_z, w_z, b_z, u_r, w_r, b_r, u_h, w_h, b_h] = ids[..Self::PARAMS] else {
            unreachable!("gru takes nine parameters")
        };
        let n = tape.value(x).rows();
        let u = self.hidden_size();
        let xz = tape.matmul(x, u_z)?;
        let xz = tape.add_row(xz, b_z)?;
        let xr = tape.matmul(x, u_r)?;
        let xr = tape.add_row(xr, b_r)?;
        let xh = tape.matmul(x, u_h)?;
        let xh = tape.add_row(xh, b_h)?;

        let mut h = tape.constant(Matrix::zeros(1, u));
        let mut states = vec![h; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let hm = match &rec_mask {
                Some(m) => tape.apply_mask(h, m.clone())?,
                None => h,
            };
            let xz_t = tape.slice_rows(xz, t, 1)?;
            let hz = tape.matmul(hm, w_z)?;
            let z = tape.add(xz_t, hz)?;
            let z = tape.sigmoid(z)?;
            let xr_t = tape.slice_rows(xr, t, 1)?;
            let hr = tape.matmul(hm, w_r)?;
            let r = tape.add(xr_t, hr)?;
            let r = tape.sigmoid(r)?;
            let rh = tape.hadamard(r, hm)?;
            let xh_t = tape.slice_rows(xh, t, 1)?;
            let hh = tape.matmul(rh, w_h)?;
            let cand = tape.add(xh_t, hh)?;
            let cand = tape.tanh(cand)?;
            let diff = tape.sub(cand, h)?;
            let step = tape.hadamard(z, diff)?;
            h = tape.add(h, step)?;
            states[t] = h;
        }
        Ok(tape.concat_rows(&states)?)
    }
}

/// One step outside the tape: `h_t` from `x_t` and `h_prev`.
pub fn gru_step(cell: &GruCell, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>, TaggerError> {
    let x = Matrix::row_vector(x.to_vec());
    let h = Matrix::row_vector(h_prev.to_vec());
    if x.cols() != cell.input_size() || h.cols() != cell.hidden_size() {
        return Err(crate::numerics::NumericsError::Shape {
            op: "gru_step",
            lhs: (1, x.cols() + h.cols()),
            rhs: (cell.input_size(), cell.hidden_size()),
        }
        .into());
    }
    let affine = |u: &Matrix, w: &Matrix, b: &Matrix, hv: &Matrix| -> Vec<f64> {
        let a = x.matmul(u).expect("checked");
        let c = hv.matmul(w).expect("checked");
        a.data().iter().zip(c.data()).zip(b.data()).map(|((p, q), r)| p + q + r).collect()
    };
    let z: Vec<f64> = affine(&cell.u_z, &cell.w_z, &cell.b_z, &h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = affine(&cell.u_r, &cell.w_r, &cell.b_r, &h).into_iter().map(sigmoid).collect();
    let rh = Matrix::row_vector(r.iter().zip(h.data()).map(|(a, b)| a * b).collect());
    let cand: Vec<f64> = affine(&cell.u_h, &cell.w_h, &cell.b_h, &rh).into_iter().map(f64::tanh).collect();
    Ok(h.data().iter().zip(&z).zip(&cand).map(|((hp, z), c)| hp + z * (c - hp)).collect())
}

/// Forward and backward cells with independent parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGruLayer {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGruLayer {
    pub const PARAMS: usize = 2 * GruCell::PARAMS;

    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            forward: GruCell::new(input, hidden, rng),
            backward: GruCell::new(input, hidden, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn output_size(&self) -> usize {
        2 * self.hidden_size()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.forward.params_mut();
        p.extend(self.backward.params_mut());
        p
    }

    /// `n x 2u`: row `t` is `[forward h_t, backward h_t]`.
    pub(crate) fn run(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        x: NodeId,
        masks: [Option<Matrix>; 2],
    ) -> Result<NodeId, TaggerError> {
        let [fm, bm] = masks;
        let f = self.forward.run(tape, &ids[..GruCell::PARAMS], x, false, fm)?;
        let b = self.backward.run(tape, &ids[GruCell::PARAMS..Self::PARAMS], x, true, bm)?;
        Ok(tape.concat_cols(&[f, b])?)
    }
}

/// Evaluates a bi-GRU on plain matrices.
pub fn bigru_forward(layer: &BiGruLayer, x: &Matrix) -> Result<Matrix, TaggerError> {
    if x.rows() == 0 {
        return Err(TaggerError::EmptyQuery);
    }
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = layer.params().into_iter().map(|p| tape.param(p)).collect();
    let xn = tape.constant(x.clone());
    let out = layer.run(&mut tape, &ids, xn, [None, None])?;
    Ok(tape.value(out).clone())
}
