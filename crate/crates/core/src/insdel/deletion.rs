//! The deletion phase: per-position keep/delete probabilities, on-policy
//! labels derived from the insertion phase's mistakes, and deletion
//! application.

use super::canvas::Canvas;
use super::insertion::InsertionRecord;
use super::params::TapedDeletion;
use crate::autodiff::{Tape, Var};
use crate::transformer::{decoder_forward, Mode};

/// Per-position supervision for the deletion model. Only target-span
/// content tokens are masked in; structural and source tokens never are.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionTarget {
    pub labels: Vec<f32>,
    pub mask: Vec<f32>,
}

impl DeletionTarget {
    pub fn any_positive(&self) -> bool {
        self.labels.iter().zip(&self.mask).any(|(&l, &m)| l == 1.0 && m == 1.0)
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1.0).count()
    }
}

/// Sigmoid of a scalar projection of each position's hidden state; one
/// probability per canvas position.
pub fn deletion_probs(
    tape: &mut Tape,
    model: &TapedDeletion,
    canvas: &Canvas,
    mode: &mut Mode,
) -> Var {
    let h = decoder_forward(
        tape,
        &model.decoder,
        canvas.tokens(),
        &canvas.segments(),
        None,
        mode,
    );
    let logit = tape.matmul(h, model.head_w);
    let logit = tape.add_row(logit, model.head_b);
    tape.sigmoid(logit)
}

/// On-policy labels: a freshly inserted token that was not span-valid is
/// labeled delete; span-valid insertions and pre-existing target tokens are
/// labeled keep. Records must come from the phase that produced
/// `canvas_after`.
pub fn deletion_targets(records: &[InsertionRecord], canvas_after: &Canvas) -> DeletionTarget {
    let len = canvas_after.len();
    let mut labels = vec![0.0f32; len];
    let mut mask = vec![0.0f32; len];
    for p in canvas_after.target_span() {
        mask[p] = 1.0;
    }
    let start = canvas_after.target_start();
    let mut earlier_insertions = 0usize;
    let mut last_slot: Option<usize> = None;
    for record in records {
        if let Some(prev) = last_slot {
            assert!(record.slot > prev, "records must be sorted by slot, one per slot");
        }
        last_slot = Some(record.slot);
        let position = start + record.slot + earlier_insertions;
        earlier_insertions += 1;
        assert!(
            position < len - 1 && canvas_after.tokens()[position] == record.token,
            "insertion record (slot {}, token {}) does not match the canvas",
            record.slot,
            record.token
        );
        if record.span_valid == Some(false) {
            labels[position] = 1.0;
        }
    }
    DeletionTarget { labels, mask }
}

/// Binary cross entropy over masked-in positions; a zero scalar carrying no
/// gradient when the mask is empty.
pub fn deletion_loss(tape: &mut Tape, probs: Var, targets: &DeletionTarget) -> Var {
    let n = tape.value(probs).len();
    assert_eq!(n, targets.labels.len(), "deletion_loss: {} probs for {} labels", n, targets.labels.len());
    tape.binary_cross_entropy(probs, &targets.labels, &targets.mask)
}

/// Remove every target-span token whose deletion probability exceeds the
/// threshold. Structural and source tokens are never removed.
pub fn apply_deletions(canvas: &Canvas, probs: &[f32], threshold: f32) -> Canvas {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "deletion threshold must be inside (0,1), got {threshold}"
    );
    assert_eq!(
        probs.len(),
        canvas.len(),
        "apply_deletions: {} probabilities for canvas of length {}",
        probs.len(),
        canvas.len()
    );
    let doomed: Vec<usize> =
        canvas.target_span().filter(|&p| probs[p] > threshold).collect();
    if doomed.is_empty() {
        return canvas.clone();
    }
    canvas.remove_positions(&doomed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insdel::slots::{SlotTargets, SlotWeighting};
    use crate::insdel::vocab::{Vocab, TOKEN_EOS_SLOT, VOCAB_SIZE};

    fn ids(s: &str) -> Vec<usize> {
        Vocab::encode_word(s)
    }

    #[test]
    fn no_insertions_means_all_keep_labels_on_existing_tokens() {
        let canvas = Canvas::new(&ids("ab"), &ids("klm"));
        let target = deletion_targets(&[], &canvas);
        assert!(target.labels.iter().all(|&l| l == 0.0));
        assert_eq!(target.masked_count(), 3);
        let span: Vec<usize> = canvas.target_span().collect();
        for p in 0..canvas.len() {
            assert_eq!(target.mask[p] == 1.0, span.contains(&p));
        }
    }

    #[test]
    fn invalid_insertion_gets_delete_label() {
        // slot with span {q}: inserting 'x' there must be labeled delete
        let full_target = ids("kqm");
        let alignment = [0usize, 2]; // keeps k, m; slot 1 has span {q}
        let kept: Vec<(usize, usize)> =
            alignment.iter().map(|&i| (i, full_target[i])).collect();
        let canvas = Canvas::with_alignment(&ids("ab"), &kept);
        let record = InsertionRecord {
            slot: 1,
            token: Vocab::encode_letter('x'),
            span_valid: Some(false),
        };
        let after = canvas.insert_at_slots(&[(1, record.token)]);
        let target = deletion_targets(&[record], &after);
        let inserted_pos = after.target_start() + 1;
        assert_eq!(target.labels[inserted_pos], 1.0);
        assert_eq!(target.labels.iter().filter(|&&l| l == 1.0).count(), 1);
    }

    #[test]
    fn table_one_second_u_is_the_only_delete() {
        // canvas keeps p q r u v w of o..w; insertions: valid 'o' at slot 0,
        // invalid 'u' at slot 4. The duplicate (second) 'u' gets the delete
        // decision; applying it yields "o p q r u v w".
        let source = ids("efghijklm");
        let full_target = ids("opqrstuvw");
        let alignment = [1usize, 2, 3, 6, 7, 8];
        let kept: Vec<(usize, usize)> =
            alignment.iter().map(|&i| (i, full_target[i])).collect();
        let canvas = Canvas::with_alignment(&source, &kept);
        let records = vec![
            InsertionRecord { slot: 0, token: Vocab::encode_letter('o'), span_valid: Some(true) },
            InsertionRecord { slot: 4, token: Vocab::encode_letter('u'), span_valid: Some(false) },
        ];
        let after = canvas
            .insert_at_slots(&records.iter().map(|r| (r.slot, r.token)).collect::<Vec<_>>());
        assert_eq!(Vocab::decode_word(after.target_tokens()), "opqruuvw");

        let target = deletion_targets(&records, &after);
        let second_u = after.target_start() + 5;
        assert_eq!(after.tokens()[second_u], Vocab::encode_letter('u'));
        assert_eq!(target.labels[second_u], 1.0);
        assert_eq!(target.labels.iter().filter(|&&l| l == 1.0).count(), 1);

        // oracle deletion of exactly the labeled position
        let mut probs = vec![0.0f32; after.len()];
        probs[second_u] = 0.99;
        let cleaned = apply_deletions(&after, &probs, 0.5);
        assert_eq!(Vocab::decode_word(cleaned.target_tokens()), "opqruvw");
    }

    #[test]
    fn labels_are_one_only_at_current_phase_insertions() {
        let full_target = ids("abcde");
        let alignment = [0usize, 4]; // keeps a, e
        let kept: Vec<(usize, usize)> =
            alignment.iter().map(|&i| (i, full_target[i])).collect();
        let canvas = Canvas::with_alignment(&ids("zz"), &kept);
        let targets = SlotTargets::build(&alignment, &full_target, SlotWeighting::default());
        // force a wrong letter into the middle slot
        let mut rows = vec![0.0f32; targets.slot_count() * VOCAB_SIZE];
        for s in 0..targets.slot_count() {
            rows[s * VOCAB_SIZE + TOKEN_EOS_SLOT] = 5.0;
        }
        rows[VOCAB_SIZE + Vocab::encode_letter('z')] = 9.0;
        let out = crate::insdel::greedy_parallel_insert(&canvas, &rows, Some(&targets));
        let dt = deletion_targets(&out.records, &out.canvas);
        let flagged: Vec<usize> = (0..dt.labels.len()).filter(|&i| dt.labels[i] == 1.0).collect();
        assert_eq!(flagged.len(), 1);
        // the kept tokens a and e are label 0 but masked in
        assert_eq!(dt.masked_count(), 3);
    }

    #[test]
    #[should_panic(expected = "does not match the canvas")]
    fn mismatched_record_is_rejected() {
        let canvas = Canvas::new(&ids("ab"), &ids("kl"));
        let record = InsertionRecord {
            slot: 0,
            token: Vocab::encode_letter('z'),
            span_valid: Some(false),
        };
        deletion_targets(&[record], &canvas);
    }

    #[test]
    fn below_threshold_probabilities_change_nothing() {
        let canvas = Canvas::new(&ids("ab"), &ids("klm"));
        let probs = vec![0.4f32; canvas.len()];
        let out = apply_deletions(&canvas, &probs, 0.5);
        assert_eq!(out, canvas);
    }

    #[test]
    fn structural_and_source_positions_survive_any_probability() {
        let canvas = Canvas::new(&ids("ab"), &ids("k"));
        let probs = vec![0.99f32; canvas.len()];
        let out = apply_deletions(&canvas, &probs, 0.5);
        assert_eq!(out.source_tokens(), ids("ab").as_slice());
        assert_eq!(out.target_len(), 0);
        assert_eq!(out.len(), 5);
    }

    #[test]
    #[should_panic(expected = "threshold must be inside")]
    fn threshold_bounds_enforced() {
        let canvas = Canvas::new(&ids("ab"), &[]);
        apply_deletions(&canvas, &vec![0.0; canvas.len()], 1.0);
    }
}
