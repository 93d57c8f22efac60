//! Dense float64 tensors, reverse-mode differentiation and Adam.
//!
//! Convolution here means cross-correlation, the usual deep-learning
//! convention: the kernel is not flipped. Padding is always zero padding.

mod adam;
mod checkpoint;
pub mod gemm;
pub mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use graph::{Gradients, Graph, Var};
pub use param::{ParamKind, Parameter};
pub use tensor::Tensor;
