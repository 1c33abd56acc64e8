//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Second-order quantities are
//! never taken by differentiating twice; callers build the first-order
//! gradient they need as an explicit expression and differentiate that.

mod gradcheck;
mod mlp;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use mlp::{forward_mlp, mlp_on_tape, softmax_xent};
pub use tape::{sign, Gradients, Op, Tape, Var};
pub(crate) use tape::softmax_in_place;
pub use tensor::{argmax, Tensor};
