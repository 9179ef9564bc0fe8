//! Dense tensor kernels and the reverse-mode tape used to train the model.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{
    cosine_matrix, cosine_similarity, l2_normalize_rows, leaky_relu, masked_softmax_rows, matmul,
    softmax_over_axis, Tensor, EPS, LEAKY_SLOPE,
};
