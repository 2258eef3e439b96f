//! Adam optimizer with bias correction. Moment accumulators are f64
//! regardless of the model's storage width.

use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Optimizer hyperparameters. Each field defaults independently so a
/// config can override just the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_lr() -> f64 {
    1e-5
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-7
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<S: Scalar>(model: &Model<S>, hyper: AdamHyper) -> Self {
        let zeros: Vec<Vec<f64>> = (0..model.tensor_count())
            .map(|t| vec![0.0; model.tensor(t).len()])
            .collect();
        AdamState {
            hyper,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected update of a single parameter. Returns the new
/// value; `m` and `v` are the (already decayed-into) moment cells.
#[inline]
fn update_value(theta: f64, g: f64, m: &mut f64, v: &mut f64, t: u64, h: &AdamHyper) -> f64 {
    *m = h.beta1 * *m + (1.0 - h.beta1) * g;
    *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
    let m_hat = *m / (1.0 - h.beta1.powi(t as i32));
    let v_hat = *v / (1.0 - h.beta2.powi(t as i32));
    theta - h.lr * m_hat / (v_hat.sqrt() + h.eps)
}

/// Apply one Adam step in place. The timestep increments before the
/// update, so the first call uses t = 1.
pub fn adam_step<S: Scalar>(
    model: &mut Model<S>,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<()> {
    if grads.tensor_count() != model.tensor_count() {
        return Err(Error::ShapeMismatch(format!(
            "gradient tensor count {} != model {}",
            grads.tensor_count(),
            model.tensor_count()
        )));
    }
    for t in 0..model.tensor_count() {
        if grads.tensor(t).len() != model.tensor(t).len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient tensor {t} length {} != model {}",
                grads.tensor(t).len(),
                model.tensor(t).len()
            )));
        }
    }
    state.t += 1;
    let h = state.hyper;
    let step = state.t;
    for t in 0..model.tensor_count() {
        let g = grads.tensor(t);
        let m = &mut state.m[t];
        let v = &mut state.v[t];
        let params = model.tensor_mut(t);
        for i in 0..params.len() {
            let new = update_value(params[i].to_f64(), g[i], &mut m[i], &mut v[i], step, &h);
            params[i] = S::from_f64(new);
        }
    }
    Ok(())
}
