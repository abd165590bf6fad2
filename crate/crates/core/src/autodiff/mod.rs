//! Dense tensors, a recording tape with reverse-mode gradients, and a
//! finite-difference oracle for checking them.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport, ParamCheck};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Slope of the negative half of LeakyReLU in attention scoring.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;
