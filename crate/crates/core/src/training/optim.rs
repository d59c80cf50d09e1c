//! Adadelta and Nadam with per-parameter state.

use super::TrainingError;
use crate::numerics::Matrix;

fn check_shapes(params: &[&mut Matrix], grads: &[Matrix], state: &[Matrix]) -> Result<(), TrainingError> {
    if params.len() != state.len() || grads.len() != state.len() {
        return Err(TrainingError::ParameterCount {
            expected: state.len(),
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (i, ((p, g), s)) in params.iter().zip(grads).zip(state).enumerate() {
        if p.shape() != s.shape() || g.shape() != s.shape() {
            return Err(TrainingError::Shape {
                index: i,
                expected: s.shape(),
                param: p.shape(),
                grad: g.shape(),
            });
        }
    }
    Ok(())
}

fn zeros_like(params: &[&Matrix]) -> Vec<Matrix> {
    params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self { rho: 0.95, epsilon: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    pub config: AdadeltaConfig,
    /// Running average of squared gradients.
    pub sq_grad: Vec<Matrix>,
    /// Running average of squared updates.
    pub sq_delta: Vec<Matrix>,
}

impl AdadeltaState {
    pub fn new(params: &[&Matrix], config: AdadeltaConfig) -> Self {
        Self {
            config,
            sq_grad: zeros_like(params),
            sq_delta: zeros_like(params),
        }
    }
}

pub fn adadelta_step(state: &mut AdadeltaState, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<(), TrainingError> {
    check_shapes(params, grads, &state.sq_grad)?;
    let AdadeltaConfig { rho, epsilon } = state.config;
    for (((p, g), eg), ed) in params.iter_mut().zip(grads).zip(&mut state.sq_grad).zip(&mut state.sq_delta) {
        let pd = p.data_mut();
        let (egd, edd) = (eg.data_mut(), ed.data_mut());
        for (j, &gj) in g.data().iter().enumerate() {
            egd[j] = rho * egd[j] + (1.0 - rho) * gj * gj;
            let dx = -((edd[j] + epsilon).sqrt() / (egd[j] + epsilon).sqrt()) * gj;
            edd[j] = rho * edd[j] + (1.0 - rho) * dx * dx;
            pd[j] += dx;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NadamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NadamState {
    pub config: NadamConfig,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    /// Steps taken so far.
    pub t: u64,
}

impl NadamState {
    pub fn new(params: &[&Matrix], config: NadamConfig) -> Self {
        Self {
            config,
            m: zeros_like(params),
            v: zeros_like(params),
            t: 0,
        }
    }
}

/// `t` is incremented first, so the first step uses `t = 1`.
pub fn nadam_step(state: &mut NadamState, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<(), TrainingError> {
    check_shapes(params, grads, &state.m)?;
    state.t += 1;
    let NadamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon,
    } = state.config;
    let t = state.t as f64;
    let m_corr = 1.0 - b1.powf(t + 1.0);
    let g_corr = 1.0 - b1.powf(t);
    let v_corr = 1.0 - b2.powf(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (j, &gj) in g.data().iter().enumerate() {
            md[j] = b1 * md[j] + (1.0 - b1) * gj;
            vd[j] = b2 * vd[j] + (1.0 - b2) * gj * gj;
            let m_hat = md[j] / m_corr;
            let v_hat = vd[j] / v_corr;
            let num = b1 * m_hat + (1.0 - b1) * gj / g_corr;
            pd[j] -= lr * num / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
