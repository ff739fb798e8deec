//! Dense tensors, reverse-mode differentiation, Adam, finite-difference
//! gradient checking and the `HTLA1` parameter checkpoint format.

mod checkpoint;
mod gradcheck;
pub mod init;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use params::{adam_step, AdamConfig, ParamId, ParamStore, Parameter};
pub use tape::{log_sum_exp, ContrastGroup, Gradients, KeyMask, Mode, RowMix, Tape, Var, BCE_CLAMP};
pub use tensor::{
    cosine_sim, dot, gelu, gelu_scalar, gemm, layer_norm, norm, sigmoid_scalar, softmax, Tensor,
    COSINE_EPS, LAYER_NORM_EPS,
};

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("shape {expected:?} does not match buffer of length {len}")]
    ShapeMismatch { expected: Vec<usize>, len: usize },
    #[error("non-finite gradient in parameter `{0}`; step aborted")]
    NonFiniteGradient(String),
    #[error("not an HTLA1 checkpoint")]
    BadMagic,
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?} in checkpoint, model expects {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint tensor `{0}` does not exist in the model")]
    UnexpectedTensor(String),
    #[error("checkpoint i/o: {0}")]
    Io(String),
}
