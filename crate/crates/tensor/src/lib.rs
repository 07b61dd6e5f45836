//! Minimal CPU tensor library for NCHW convolutional networks.
//!
//! Provides dense tensors generic over `f32`/`f64`, a tape-based autodiff
//! [`Graph`], the layer primitives the forensic model needs (grouped and
//! dilated convolutions, channel layer norm, batch norm, bilinear
//! resampling) and an Adam optimizer.

mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
pub mod ops;
pub mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use ops::conv::{conv2d, conv2d_backward, Conv2dSpec};
pub use ops::elementwise::{gelu, sigmoid};
pub use ops::shape::{pad_replicate, resize_bilinear};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{gemm, Float, MatRef, Tensor};
