//! Differentiable building blocks with hand-written gradients.

mod adam;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
mod matrix;
mod params;
mod scalar;
pub mod sizes;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    apply_mask, dense_backward, dense_forward, dropout_mask, embedding_backward, embedding_forward,
    relu_backward_inplace, relu_inplace, softmax_cross_entropy, softmax_inplace, DEFAULT_DROPOUT,
};
pub use lstm::{lstm_bias, LstmCache, LstmGrads, LstmWeights};
pub use matrix::{gemm, matmul, Matrix};
pub use params::{glorot_uniform, ParamId, ParamStore};
pub use scalar::Scalar;
