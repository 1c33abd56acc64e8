use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer state. Moments are allocated on the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    state: &mut OptimizerState,
    params: Vec<&mut Tensor>,
    grads: Vec<&Tensor>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters vs {} gradients", params.len(), grads.len()),
        ));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros_like(p)).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("state holds {} moments, got {} parameters", state.m.len(), params.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "parameter {}: {:?} vs gradient {:?} vs moment {:?}",
                    i,
                    p.shape(),
                    g.shape(),
                    state.m[i].shape()
                ),
            ));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pv = p.values_mut();
        let (mv, vv) = (m.values_mut(), v.values_mut());
        for (j, &gj) in g.values().iter().enumerate() {
            mv[j] = b1 * mv[j] + (1.0 - b1) * gj;
            vv[j] = b2 * vv[j] + (1.0 - b2) * gj * gj;
            let mhat = mv[j] / c1;
            let vhat = vv[j] / c2;
            pv[j] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
