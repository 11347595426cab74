//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod kernels;
mod optim;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig, AdamMeta};
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::{ParamId, ParamSet, Tensor};

pub use kernels::{log_sum_exp, softmax_row};
