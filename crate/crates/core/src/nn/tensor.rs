//! Channel-major 4D tensors and the storage-precision abstraction.
//!
//! Tensors store either f32 (production) or f64 (used by the
//! finite-difference gradient verification, where f32 rounding would
//! swamp the comparison). All kernel arithmetic accumulates in f64
//! regardless of storage width.

use crate::volume::Volume3;

/// Storage element for network tensors. Arithmetic happens in f64; this
/// trait only widens/narrows at load and store boundaries.
pub trait Scalar:
    Copy + Clone + Send + Sync + PartialEq + PartialOrd + std::fmt::Debug + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn zero() -> Self {
        0.0
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn zero() -> Self {
        0.0
    }
}

/// Channel-major activation tensor: linear index
/// c·(nx·ny·nz) + x + nx·(y + ny·z), x fastest within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<S: Scalar> {
    channels: usize,
    shape: (usize, usize, usize),
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(channels: usize, shape: (usize, usize, usize)) -> Self {
        let (nx, ny, nz) = shape;
        Tensor4 {
            channels,
            shape,
            data: vec![S::zero(); channels * nx * ny * nz],
        }
    }

    pub fn from_data(channels: usize, shape: (usize, usize, usize), data: Vec<S>) -> Self {
        let (nx, ny, nz) = shape;
        assert_eq!(data.len(), channels * nx * ny * nz, "tensor data length");
        Tensor4 {
            channels,
            shape,
            data,
        }
    }

    /// Wrap a volume as a single-channel tensor.
    pub fn from_volume(vol: &Volume3) -> Self {
        let data = vol.voxels().iter().map(|&v| S::from_f64(v as f64)).collect();
        Tensor4 {
            channels: 1,
            shape: vol.shape(),
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn spatial_len(&self) -> usize {
        let (nx, ny, nz) = self.shape;
        nx * ny * nz
    }

    #[inline]
    pub fn lin(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        let (nx, ny, _) = self.shape;
        c * self.spatial_len() + x + nx * (y + ny * z)
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> S {
        self.data[self.lin(c, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: S) {
        let i = self.lin(c, x, y, z);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }
}
