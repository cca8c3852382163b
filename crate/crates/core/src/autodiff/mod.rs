//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every primitive applied to its variables in execution
//! order. [`Tape::backward`] replays the record in reverse once, accumulating
//! vector-Jacobian products into every leaf marked `requires_grad`.
//!
//! Shapes must conform exactly; the only broadcast is [`Tape::bias_add`].

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, grad_check, RandomNet};
pub use optim::{gradient_descent_step, sgd_momentum_step, OptState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
