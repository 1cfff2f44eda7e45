//! Minimal dense-tensor numerics with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! consumes the tape and replays it in reverse, so a tape can never be
//! differentiated twice. Long-lived values (model parameters) are plain
//! [`Tensor`]s registered on a tape per forward pass; gradients are exported
//! back into `Tensor::grad` afterwards.
//!
//! All arithmetic is 32-bit, including matmul accumulation.

mod adam;
mod grad_check;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use grad_check::grad_check_finite_diff;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
