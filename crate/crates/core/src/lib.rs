//! Character-level insertion-deletion sequence generation.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: dense f32 tensors, a reverse-mode tape, Adam, and a
//!   finite-difference gradient checker. Everything above is expressed in
//!   these operations.
//! - [`transformer`]: a bidirectional (non-causal) pre-norm transformer
//!   decoder stack over a token canvas.
//! - [`insdel`]: the canvas layout, slot-factorized insertion distribution
//!   with balanced-tree supervision, greedy parallel insertion, and the
//!   per-token deletion model with on-policy labels.
//! - [`training`]: the joint training iteration (sample a partial
//!   hypothesis, insert without backpropagating through sampling, label and
//!   train the deletion model), plus the training loop.
//! - [`tasks`]: synthetic character translation task generators and TSV
//!   dataset I/O.
//! - [`eval`]: iterative insert-then-delete decoding, decode traces,
//!   corpus BLEU, and evaluation reports.
//! - [`checkpoint`] / [`config`]: binary checkpoints and key=value run
//!   configuration shared with the CLI.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod insdel;
pub mod rng;
pub mod tasks;
pub mod training;
pub mod transformer;
