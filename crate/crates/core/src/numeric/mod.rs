//! Dense tensors, a reverse-mode tape over the handful of primitives the
//! geolocation model uses, the Adam optimizer and a finite-difference
//! gradient checker.
//!
//! All arithmetic is `f64`.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckOptions, GradCheckReport};
pub use optim::{adam_step, AdamState};
pub use tape::{sigmoid, BatchNormState, CustomOp, Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("batch normalization in train mode needs at least 2 rows, got {0}")]
    BatchSize(usize),
    #[error("contract violation: {0}")]
    Contract(String),
}
