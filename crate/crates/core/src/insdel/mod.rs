//! Canvas construction, the slot-factorized insertion distribution with
//! balanced-tree supervision, greedy parallel insertion, and the per-token
//! deletion distribution with on-policy labels.

pub mod canvas;
pub mod deletion;
pub mod insertion;
pub mod params;
pub mod slots;
pub mod vocab;

pub use canvas::Canvas;
pub use deletion::{
    apply_deletions, deletion_loss, deletion_probs, deletion_targets, DeletionTarget,
};
pub use insertion::{
    greedy_parallel_insert, insertion_logits, insertion_loss, InsertOutcome, InsertionRecord,
};
pub use params::{DeletionParams, InsertionParams, TapedDeletion, TapedInsertion};
pub use slots::{balanced_tree_weights, slot_spans, SlotTargets, SlotWeighting};
pub use vocab::{Vocab, TOKEN_CLS, TOKEN_EOS_SLOT, TOKEN_PAD, TOKEN_SEP, VOCAB_SIZE};
