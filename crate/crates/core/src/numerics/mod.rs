//! Dense linear algebra, softmax, AdamW and finite-difference checking.

mod gradcheck;
mod matrix;
mod optim;
mod softmax;

pub use gradcheck::{finite_diff_gradient, max_relative_error, DEFAULT_STEP};
pub use matrix::{axpy, cosine_distance, cosine_similarity, dot, max_abs_diff, norm, Matrix};
pub use optim::{adamw_step, lr_at_epoch, OptimizerConfig, Parameter};
pub use softmax::{softmax_backward, softmax_row};
