//! The insertion phase: per-slot vocabulary logits, the weighted loss, and
//! greedy parallel insertion.

use super::canvas::Canvas;
use super::params::TapedInsertion;
use super::slots::SlotTargets;
use super::vocab::{Vocab, TOKEN_EOS_SLOT, VOCAB_SIZE};
use crate::autodiff::{Tape, Var};
use crate::transformer::{decoder_forward, Mode};

/// One realized insertion: which token went into which slot, and whether it
/// was a member of that slot's span (known only when the canvas carries an
/// alignment; `None` at inference).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertionRecord {
    pub slot: usize,
    pub token: usize,
    pub span_valid: Option<bool>,
}

/// Result of one parallel insertion phase.
pub struct InsertOutcome {
    pub canvas: Canvas,
    pub records: Vec<InsertionRecord>,
    /// Slots whose argmax was a structural token, coerced to no-insertion.
    pub suppressed_structural: usize,
}

/// Hidden state at each slot's anchor position projected to vocabulary
/// logits; one row per slot.
pub fn insertion_logits(
    tape: &mut Tape,
    model: &TapedInsertion,
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
    let anchors = canvas.slot_anchors();
    let rows = tape.gather_rows(h, &anchors);
    let logits = tape.matmul(rows, model.head_w);
    tape.add_row(logits, model.head_b)
}

/// Weighted cross entropy between slot logits and slot target weights,
/// averaged over slots.
pub fn insertion_loss(tape: &mut Tape, logits: Var, targets: &SlotTargets) -> Var {
    let rows = tape.shape(logits)[0];
    assert_eq!(
        rows,
        targets.slot_count(),
        "insertion_loss: {} logit rows for {} slots",
        rows,
        targets.slot_count()
    );
    tape.weighted_cross_entropy(logits, &targets.weight_tensor())
}

/// Take the argmax of each slot row and apply every non-stop choice
/// simultaneously, each token inserted immediately left of its anchor.
///
/// A structural argmax (`[CLS]`/`[SEP]`/`[PAD]`) is treated as the stop
/// symbol and counted in `suppressed_structural`. When `targets` is given
/// (training), each record carries whether its token was span-valid.
pub fn greedy_parallel_insert(
    canvas: &Canvas,
    logit_rows: &[f32],
    targets: Option<&SlotTargets>,
) -> InsertOutcome {
    let slots = canvas.slot_count();
    assert_eq!(
        logit_rows.len(),
        slots * VOCAB_SIZE,
        "greedy_parallel_insert: {} logits for {} slots",
        logit_rows.len(),
        slots
    );
    if let Some(t) = targets {
        assert_eq!(t.slot_count(), slots, "slot targets do not match canvas");
    }
    let mut records = Vec::new();
    let mut suppressed = 0usize;
    for slot in 0..slots {
        let row = &logit_rows[slot * VOCAB_SIZE..(slot + 1) * VOCAB_SIZE];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("NaN logit"))
            .map(|(i, _)| i)
            .unwrap();
        if argmax == TOKEN_EOS_SLOT {
            continue;
        }
        if Vocab::is_structural(argmax) {
            suppressed += 1;
            continue;
        }
        let span_valid = targets.map(|t| t.is_valid(slot, argmax));
        records.push(InsertionRecord { slot, token: argmax, span_valid });
    }
    let inserted: Vec<(usize, usize)> = records.iter().map(|r| (r.slot, r.token)).collect();
    let canvas = canvas.insert_at_slots(&inserted);
    InsertOutcome { canvas, records, suppressed_structural: suppressed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insdel::slots::SlotWeighting;
    use crate::insdel::vocab::{TOKEN_CLS, TOKEN_SEP};

    fn ids(s: &str) -> Vec<usize> {
        Vocab::encode_word(s)
    }

    /// Logit rows with one forced argmax per slot.
    fn rows_with_argmax(choices: &[usize]) -> Vec<f32> {
        let mut rows = vec![0.0f32; choices.len() * VOCAB_SIZE];
        for (slot, &tok) in choices.iter().enumerate() {
            rows[slot * VOCAB_SIZE + tok] = 5.0;
        }
        rows
    }

    #[test]
    fn all_stop_slots_leave_canvas_unchanged() {
        let canvas = Canvas::new(&ids("ab"), &ids("kl"));
        let rows = rows_with_argmax(&[TOKEN_EOS_SLOT; 3]);
        let out = greedy_parallel_insert(&canvas, &rows, None);
        assert_eq!(out.canvas, Canvas::new(&ids("ab"), &ids("kl")));
        assert!(out.records.is_empty());
        assert_eq!(out.suppressed_structural, 0);
    }

    #[test]
    fn structural_argmax_is_coerced_to_stop_and_counted() {
        let canvas = Canvas::new(&ids("ab"), &ids("k"));
        let rows = rows_with_argmax(&[TOKEN_CLS, TOKEN_SEP]);
        let out = greedy_parallel_insert(&canvas, &rows, None);
        assert!(out.records.is_empty());
        assert_eq!(out.suppressed_structural, 2);
        assert_eq!(out.canvas.target_tokens(), ids("k").as_slice());
    }

    #[test]
    fn table_one_iteration_inserts_left_of_anchors() {
        // Ground truth o..w from source e..m; the canvas keeps p q r u v w.
        // The model inserts a valid 'o' at the first slot and an invalid
        // extra 'u' left of 'v', yielding the mid-decode hypothesis
        // "o p q r u u v w".
        let source = ids("efghijklm");
        let full_target = ids("opqrstuvw");
        let alignment = [1usize, 2, 3, 6, 7, 8];
        let kept: Vec<(usize, usize)> =
            alignment.iter().map(|&i| (i, full_target[i])).collect();
        let canvas = Canvas::with_alignment(&source, &kept);
        assert_eq!(canvas.slot_count(), 7);

        let targets = SlotTargets::build(&alignment, &full_target, SlotWeighting::default());
        let mut choices = vec![TOKEN_EOS_SLOT; 7];
        choices[0] = Vocab::encode_letter('o');
        choices[4] = Vocab::encode_letter('u');
        let out = greedy_parallel_insert(&canvas, &rows_with_argmax(&choices), Some(&targets));

        assert_eq!(Vocab::decode_word(out.canvas.target_tokens()), "opqruuvw");
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0], InsertionRecord {
            slot: 0,
            token: Vocab::encode_letter('o'),
            span_valid: Some(true),
        });
        assert_eq!(out.records[1], InsertionRecord {
            slot: 4,
            token: Vocab::encode_letter('u'),
            span_valid: Some(false),
        });
    }

    #[test]
    fn span_valid_insertions_keep_target_a_subsequence() {
        fn is_subsequence(needle: &[usize], haystack: &[usize]) -> bool {
            let mut it = haystack.iter();
            needle.iter().all(|t| it.any(|h| h == t))
        }
        let full_target = ids("abcdefg");
        let alignment = [2usize, 5]; // keeps c, f
        let kept: Vec<(usize, usize)> =
            alignment.iter().map(|&i| (i, full_target[i])).collect();
        let canvas = Canvas::with_alignment(&ids("zz"), &kept);
        let targets = SlotTargets::build(&alignment, &full_target, SlotWeighting::default());
        // insert the span center of every nonempty slot
        let choices: Vec<usize> = (0..targets.slot_count())
            .map(|s| targets.span_center(s).unwrap_or(TOKEN_EOS_SLOT))
            .collect();
        let out = greedy_parallel_insert(&canvas, &rows_with_argmax(&choices), Some(&targets));
        assert!(out.records.iter().all(|r| r.span_valid == Some(true)));
        assert!(is_subsequence(out.canvas.target_tokens(), &full_target));
    }

    #[test]
    fn logit_row_count_is_slot_count() {
        let canvas = Canvas::new(&ids("abc"), &[]);
        assert_eq!(canvas.slot_count(), 1);
        let canvas = Canvas::new(&ids("abc"), &ids("xyz"));
        assert_eq!(canvas.slot_count(), 4);
    }

    #[test]
    #[should_panic(expected = "logits for")]
    fn wrong_logit_row_count_is_rejected() {
        let canvas = Canvas::new(&ids("ab"), &ids("k"));
        greedy_parallel_insert(&canvas, &vec![0.0; VOCAB_SIZE], None);
    }
}
