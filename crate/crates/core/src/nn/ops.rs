//! Layer kernels: valid stride-1 3D cross-correlation, 2×2×2 max
//! pooling with argmax retention, and the sigmoid/binary-cross-entropy
//! head. Forward kernels accumulate in f64 and store at tensor width.

use super::tensor::{Scalar, Tensor4};
use crate::error::{Error, Result};

/// Probability clamp applied inside the loss so it stays finite.
pub const BCE_CLAMP: f64 = 1e-7;

/// Weights and bias of one convolution layer.
///
/// Weight linear index: kx + k·(ky + k·(kz + k·(ic + in_c·oc))) — kernel
/// x fastest, output channel slowest. One bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<S: Scalar> {
    pub out_c: usize,
    pub in_c: usize,
    pub k: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> ConvKernel<S> {
    pub fn zeros(out_c: usize, in_c: usize, k: usize) -> Self {
        ConvKernel {
            out_c,
            in_c,
            k,
            weights: vec![S::zero(); out_c * in_c * k * k * k],
            bias: vec![S::zero(); out_c],
        }
    }

    #[inline]
    pub fn w_lin(&self, oc: usize, ic: usize, kx: usize, ky: usize, kz: usize) -> usize {
        kx + self.k * (ky + self.k * (kz + self.k * (ic + self.in_c * oc)))
    }
}

/// Valid (unpadded) stride-1 cross-correlation. Output spatial dims are
/// n − k + 1 per axis. No activation is fused.
pub fn conv3d_forward<S: Scalar>(input: &Tensor4<S>, kern: &ConvKernel<S>) -> Result<Tensor4<S>> {
    if input.channels() != kern.in_c {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {}",
            kern.in_c,
            input.channels()
        )));
    }
    let (nx, ny, nz) = input.shape();
    let k = kern.k;
    if nx < k || ny < k || nz < k {
        return Err(Error::ShapeMismatch(format!(
            "kernel {k} does not fit input {:?}",
            input.shape()
        )));
    }
    let (ox, oy, oz) = (nx - k + 1, ny - k + 1, nz - k + 1);
    let mut out = Tensor4::zeros(kern.out_c, (ox, oy, oz));
    for oc in 0..kern.out_c {
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let mut acc = kern.bias[oc].to_f64();
                    for ic in 0..kern.in_c {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let w = kern.weights[kern.w_lin(oc, ic, kx, ky, kz)];
                                    let v = input.get(ic, x + kx, y + ky, z + kz);
                                    acc += w.to_f64() * v.to_f64();
                                }
                            }
                        }
                    }
                    out.set(oc, x, y, z, S::from_f64(acc));
                }
            }
        }
    }
    Ok(out)
}

/// Non-overlapping 2×2×2 max pooling; odd trailing planes are dropped
/// (floor semantics). Returns the pooled tensor and, per output element,
/// the linear index into the input's data of the selected maximum. Ties
/// keep the lowest linear index.
pub fn maxpool3d<S: Scalar>(input: &Tensor4<S>) -> (Tensor4<S>, Vec<usize>) {
    let (nx, ny, nz) = input.shape();
    let (ox, oy, oz) = (nx / 2, ny / 2, nz / 2);
    let channels = input.channels();
    let mut out = Tensor4::zeros(channels, (ox, oy, oz));
    let mut argmax = vec![0usize; channels * ox * oy * oz];
    for c in 0..channels {
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let mut best_i = input.lin(c, 2 * x, 2 * y, 2 * z);
                    let mut best_v = input.data()[best_i];
                    // dz/dy/dx ascending visits the window in ascending
                    // linear order, so strict > keeps the lowest index on ties
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = input.lin(c, 2 * x + dx, 2 * y + dy, 2 * z + dz);
                                let v = input.data()[i];
                                if v > best_v {
                                    best_v = v;
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = out.lin(c, x, y, z);
                    out.data_mut()[o] = best_v;
                    argmax[o] = best_i;
                }
            }
        }
    }
    (out, argmax)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binary cross-entropy −[y·ln p + (1−y)·ln(1−p)] with p clamped to
/// [1e-7, 1−1e-7] so the result is always finite.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}
