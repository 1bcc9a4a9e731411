//! Minimal reverse-mode differentiation engine.
//!
//! Tensors use layout `[b, x, y, z, c]` with the channel axis fastest.
//! A [`Tape`] records every executed operation; [`Tape::backward`] walks it
//! in exact reverse order and accumulates gradients additively. All
//! reductions run in a fixed sequential order per output element, so forward
//! and backward values are bitwise reproducible regardless of how many
//! threads participate.

mod conv;
mod gradcheck;
mod loss;
mod norm;
mod pool;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use norm::ChannelStats;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
