//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit floats, row-major, define-by-run: a [`Tape`] records
//! executed operations and replays them in reverse to accumulate gradients
//! into parameter tensors. Tensors are immutable after construction except
//! for their gradient buffers, so they can be moved (and read-shared) across
//! threads; a tape itself is single-threaded.

mod optim;
mod tape;
mod tensor;

pub use optim::Adam;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) mod linalg;
