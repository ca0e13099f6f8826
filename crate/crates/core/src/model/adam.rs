use crate::error::{Error, Result};

use super::ScorerParams;

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ScorerParams,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    let n = params.len();
    for (what, len) in [
        ("gradients", grads.len()),
        ("first moments", state.m.len()),
        ("second moments", state.v.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                left: len,
                right: n,
            });
        }
    }
    let (b1, b2) = betas;
    state.step += 1;
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    let data = params.as_mut_slice();
    for i in 0..n {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
