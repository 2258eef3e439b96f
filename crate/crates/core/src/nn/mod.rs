//! From-scratch 3D convolutional network: channel-major tensors, valid
//! stride-1 convolution, 2×2×2 max pooling, a dense ReLU layer, and a
//! one-unit sigmoid head trained with binary cross-entropy and Adam.
//!
//! Storage precision is generic (f32 for training, f64 for gradient
//! verification); all accumulation happens in f64 either way.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_difference_check, CheckReport};
pub use model::{param_count, ForwardCache, Gradients, LayerPlan, Model, ModelConfig};
pub use ops::{bce_loss, conv3d_forward, maxpool3d, sigmoid, ConvKernel};
pub use tensor::{Scalar, Tensor4};
