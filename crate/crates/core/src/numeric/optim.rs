use serde::{Deserialize, Serialize};

use super::{NumericError, Tensor};

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction.
///
/// `decay[i]` marks tensors that carry the `λ‖θ‖²` penalty; for those the
/// penalty gradient `2λθ` is added to the loss gradient before the moment
/// updates.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    decay: &[bool],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), NumericError> {
    let n = params.len();
    if grads.len() != n || decay.len() != n || state.m.len() != n {
        return Err(NumericError::Shape(format!(
            "adam: {n} params, {} grads, {} decay flags, {} moment slots",
            grads.len(),
            decay.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(NumericError::Shape(format!(
                "adam slot {i}: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
    }

    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..n {
        let l2 = if decay[i] { 2.0 * weight_decay } else { 0.0 };
        let p = params[i].data_mut();
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..p.len() {
            let gk = g[k] + l2 * p[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
