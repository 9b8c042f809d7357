//! DenseUNet with feedback non-local attention, built on a small
//! reverse-mode autodiff engine over NHWC `f64` tensors.
//!
//! Training, inference, parameter counting, gradient verification and
//! checkpointing run on the CPU, single-threaded and bit-reproducible for a
//! given seed.

pub mod augment;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{NetError, Result};
pub use graph::{Gradients, Graph, NormSettings, Var};
pub use model::{build_denseunet, count_params, AttentionKind, AttentionPlacement, NetConfig, Network, Normalization};
pub use params::{learning_rate, Init, Nadam, ParamEntry, ParamStore};
pub use tensor::Tensor4;
