//! Dense reverse-mode differentiation, Adam, and finite-difference checking.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{analytic_gradients, grad_check, grad_check_many, numeric_gradients};
pub use tape::{Gradients, Tape, Var, DEFAULT_LEAKY_SLOPE};
pub use tensor::Tensor;

pub(crate) use tape::log_sum_exp;
