//! Dense tensors, matrix kernels, reverse-mode differentiation and seeded
//! randomness shared by every other module.

pub mod gradcheck;
pub mod linalg;
pub mod ops;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use linalg::{matmul, matmul_at, matmul_bt};
pub use ops::{
    bce_with_logits, dropout, dropout_mask, kl_divergence, log_softmax_temp, sigmoid, softmax_temp,
    BatchNorm,
};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::{RngSnapshot, RngState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
