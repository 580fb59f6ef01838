//! Dense `f64` tensors with a define-by-run reverse-mode tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_detailed, GradCheck, GRAD_CHECK_STEP};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_row;
