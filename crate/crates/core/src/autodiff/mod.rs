//! Minimal reverse-mode differentiable array engine.

mod array;
mod gradcheck;
mod tape;


pub use array::Array;
pub use gradcheck::{central_difference, grad_check};
pub use tape::{Activation, Gradients, ParamId, Pattern, Tape, Var};
