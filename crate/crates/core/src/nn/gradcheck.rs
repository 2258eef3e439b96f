//! Finite-difference verification of the analytic gradients.
//!
//! Runs entirely in f64 storage so float rounding stays far below the
//! comparison tolerance. The report carries two safety margins alongside
//! the error: the smallest |ReLU pre-activation| and the smallest
//! max-pool winner/runner-up gap seen in the unperturbed forward pass.
//! When both margins comfortably exceed the perturbation's reach, no
//! parameter step of ±h can flip a ReLU or an argmax, so the central
//! difference is sampling a smooth function and the comparison is exact
//! up to O(h²) truncation.

use super::model::{Model, ModelConfig};
use super::ops::bce_loss;
use super::tensor::Tensor4;
use crate::error::Result;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub params: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub min_relu_margin: f64,
    pub min_pool_gap: f64,
    pub prob: f64,
}

/// Relative disagreement between analytic and finite-difference values.
/// Pairs that are both numerically zero (below 1e-10) count as exact:
/// they arise from structurally dead paths where both sides are true
/// zeros, and dividing rounding dust by rounding dust is meaningless.
fn rel_err(analytic: f64, fd: f64) -> f64 {
    let denom = analytic.abs().max(fd.abs());
    if denom < 1e-10 {
        0.0
    } else {
        (analytic - fd).abs() / denom
    }
}

/// Compare every parameter's analytic gradient against the central
/// difference (L(θ+h) − L(θ−h)) / 2h on a seeded model and input.
pub fn finite_difference_check(
    config: &ModelConfig,
    seed: u64,
    y: f64,
    h: f64,
) -> Result<CheckReport> {
    let rng = RngStream::new(seed);
    let mut model: Model<f64> = Model::init(config, &mut rng.child(1))?;
    let (nx, ny, nz) = config.input_shape;
    let mut input_rng = rng.child(2);
    let data: Vec<f64> = (0..nx * ny * nz)
        .map(|_| input_rng.uniform(0.2, 1.0))
        .collect();
    let input = Tensor4::from_data(1, (nx, ny, nz), data);

    let cache = model.forward_cached(&input)?;
    let min_relu_margin = cache.min_relu_margin();
    let min_pool_gap = cache.min_pool_gap();
    let prob = cache.prob;
    let analytic = model.backward(&cache, y);

    let n = model.param_len();
    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0usize;
    for i in 0..n {
        let theta = model.param_get(i);
        model.param_set(i, theta + h);
        let lp = bce_loss(model.forward(&input)?, y);
        model.param_set(i, theta - h);
        let lm = bce_loss(model.forward(&input)?, y);
        model.param_set(i, theta);
        let fd = (lp - lm) / (2.0 * h);
        let e = rel_err(analytic.flat_get(i), fd);
        if e > max_rel_err {
            max_rel_err = e;
            worst_index = i;
        }
    }
    Ok(CheckReport {
        params: n,
        max_rel_err,
        worst_index,
        min_relu_margin,
        min_pool_gap,
        prob,
    })
}
