//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! The substrate for the score networks, the training loop, and the
//! Jacobian-complexity diagnostic: row-major f64 tensors, a single-threaded
//! operation tape, and a Hutchinson Jacobian-norm estimator. Distinct tapes
//! may run on separate threads; tensors without a tape handle are immutable
//! values and freely sharable.

mod jacobian;
mod tape;
mod tensor;

pub use jacobian::jacobian_frobenius_sq;
pub use tape::{Activation, Gradients, NodeId, Tape};
pub use tensor::Tensor;
