//! Slot supervision: which ground-truth tokens each slot is responsible
//! for, and how their probability mass is weighted within the slot.

use super::vocab::{TOKEN_EOS_SLOT, VOCAB_SIZE};
use crate::autodiff::Tensor;
use serde::{Deserialize, Serialize};

/// How span members are weighted inside a slot's target distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SlotWeighting {
    /// Mass concentrated toward the span center so decoding completes in
    /// logarithmically many iterations; `tau` controls the sharpness.
    BalancedTree { tau: f32 },
    /// Equal mass on every span member (ablation mode).
    Uniform,
}

impl Default for SlotWeighting {
    fn default() -> Self {
        SlotWeighting::BalancedTree { tau: 1.0 }
    }
}

/// Per-slot supervision: the ordered span of missing ground-truth tokens
/// the slot covers, plus a weight row over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTargets {
    spans: Vec<Vec<usize>>,
    /// `slots x VOCAB_SIZE`, each row summing to 1.
    weights: Vec<f32>,
}

impl SlotTargets {
    /// Build supervision for a canvas whose alignment keeps `alignment`
    /// (strictly increasing indices into `full_target`).
    pub fn build(alignment: &[usize], full_target: &[usize], weighting: SlotWeighting) -> Self {
        let spans = slot_spans(alignment, full_target);
        let mut weights = Vec::with_capacity(spans.len() * VOCAB_SIZE);
        for span in &spans {
            weights.extend_from_slice(&span_weight_row(span, weighting));
        }
        SlotTargets { spans, weights }
    }

    pub fn slot_count(&self) -> usize {
        self.spans.len()
    }

    pub fn span(&self, slot: usize) -> &[usize] {
        &self.spans[slot]
    }

    pub fn spans(&self) -> &[Vec<usize>] {
        &self.spans
    }

    /// True when `token` is a member of the slot's span.
    pub fn is_valid(&self, slot: usize, token: usize) -> bool {
        self.spans[slot].contains(&token)
    }

    /// The center member of a slot's span (the balanced-tree argmax), if
    /// the span is nonempty.
    pub fn span_center(&self, slot: usize) -> Option<usize> {
        let span = &self.spans[slot];
        if span.is_empty() {
            None
        } else {
            Some(span[(span.len() - 1) / 2])
        }
    }

    /// Weight matrix as a `[slots x VOCAB_SIZE]` tensor for the loss.
    pub fn weight_tensor(&self) -> Tensor {
        Tensor::new(self.weights.clone(), vec![self.spans.len(), VOCAB_SIZE])
    }

    pub fn weight_row(&self, slot: usize) -> &[f32] {
        &self.weights[slot * VOCAB_SIZE..(slot + 1) * VOCAB_SIZE]
    }

    pub fn any_nonempty_span(&self) -> bool {
        self.spans.iter().any(|s| !s.is_empty())
    }
}

/// Split the missing ground-truth tokens into per-slot spans.
///
/// Slot `k`'s span holds the tokens strictly between present token `k-1`
/// and present token `k` (virtual boundaries at the sequence ends), so the
/// spans concatenated in slot order are exactly the missing tokens.
pub fn slot_spans(alignment: &[usize], full_target: &[usize]) -> Vec<Vec<usize>> {
    let n = full_target.len();
    assert!(
        alignment.windows(2).all(|w| w[0] < w[1]),
        "alignment must be strictly increasing"
    );
    assert!(
        alignment.iter().all(|&i| i < n),
        "alignment index out of range for target of length {n}"
    );
    let mut spans = Vec::with_capacity(alignment.len() + 1);
    let mut lo = 0usize;
    for &kept in alignment {
        spans.push(full_target[lo..kept].to_vec());
        lo = kept + 1;
    }
    spans.push(full_target[lo..].to_vec());
    spans
}

/// Weight of span position `j` is proportional to
/// `exp(-|j - (len-1)/2| / tau)`, normalized over span members; an empty
/// span puts probability 1 on the stop symbol. Duplicate letters inside a
/// span accumulate their positions' mass.
pub fn balanced_tree_weights(span: &[usize], tau: f32) -> Vec<f32> {
    assert!(tau > 0.0, "tau must be positive, got {tau}");
    span_weight_row(span, SlotWeighting::BalancedTree { tau })
}

fn span_weight_row(span: &[usize], weighting: SlotWeighting) -> Vec<f32> {
    let mut row = vec![0.0f32; VOCAB_SIZE];
    if span.is_empty() {
        row[TOKEN_EOS_SLOT] = 1.0;
        return row;
    }
    let center = (span.len() as f32 - 1.0) / 2.0;
    let raw: Vec<f32> = match weighting {
        SlotWeighting::BalancedTree { tau } => {
            assert!(tau > 0.0, "tau must be positive, got {tau}");
            (0..span.len()).map(|j| (-(j as f32 - center).abs() / tau).exp()).collect()
        }
        SlotWeighting::Uniform => vec![1.0; span.len()],
    };
    let total: f32 = raw.iter().sum();
    for (j, &tok) in span.iter().enumerate() {
        assert!(tok < VOCAB_SIZE, "span token id {tok} out of vocabulary");
        row[tok] += raw[j] / total;
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insdel::vocab::Vocab;

    fn ids(s: &str) -> Vec<usize> {
        Vocab::encode_word(s)
    }

    #[test]
    fn spans_forced_by_definition() {
        // target "abc", present "ac" (indices 0, 2) -> {}, {b}, {}
        let spans = slot_spans(&[0, 2], &ids("abc"));
        assert_eq!(spans, vec![vec![], ids("b"), vec![]]);
        // target "abcde", present "c" (index 2) -> {a,b}, {d,e}
        let spans = slot_spans(&[2], &ids("abcde"));
        assert_eq!(spans, vec![ids("ab"), ids("de")]);
        // present = full target -> all spans empty
        let spans = slot_spans(&[0, 1, 2], &ids("abc"));
        assert!(spans.iter().all(|s| s.is_empty()));
        assert_eq!(spans.len(), 4);
    }

    #[test]
    fn spans_partition_missing_tokens() {
        let target = ids("opqrstuvw");
        let alignment = [1usize, 2, 3, 6, 7, 8]; // keeps p q r u v w
        let spans = slot_spans(&alignment, &target);
        let concatenated: Vec<usize> = spans.iter().flatten().cloned().collect();
        assert_eq!(concatenated, ids("ost"));
    }

    #[test]
    fn singleton_span_gets_weight_one() {
        let row = balanced_tree_weights(&ids("b"), 1.0);
        assert_eq!(row[Vocab::encode_letter('b')], 1.0);
        assert_eq!(row.iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn tiny_tau_concentrates_on_center() {
        let row = balanced_tree_weights(&ids("bcd"), 1e-3);
        assert!(row[Vocab::encode_letter('c')] > 0.999);
    }

    #[test]
    fn tau_one_triple_matches_closed_form() {
        // weights proportional to (e^-1, 1, e^-1): (0.21194, 0.57612, 0.21194)
        let row = balanced_tree_weights(&ids("bcd"), 1.0);
        assert!((row[Vocab::encode_letter('b')] - 0.21194156).abs() < 1e-6);
        assert!((row[Vocab::encode_letter('c')] - 0.57611688).abs() < 1e-6);
        assert!((row[Vocab::encode_letter('d')] - 0.21194156).abs() < 1e-6);
    }

    #[test]
    fn empty_span_supervises_the_stop_symbol() {
        let row = balanced_tree_weights(&[], 1.0);
        assert_eq!(row[TOKEN_EOS_SLOT], 1.0);
        assert_eq!(row.iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn duplicate_letters_accumulate_mass() {
        let row = balanced_tree_weights(&ids("aba"), 1.0);
        let a = row[Vocab::encode_letter('a')];
        let b = row[Vocab::encode_letter('b')];
        assert!((a + b - 1.0).abs() < 1e-6);
        assert!((a - 2.0 * 0.21194156).abs() < 1e-6);
    }

    #[test]
    fn weights_symmetric_under_span_reversal() {
        let fwd = balanced_tree_weights(&ids("bcdef"), 0.7);
        let rev = balanced_tree_weights(&ids("fedcb"), 0.7);
        for (f, r) in fwd.iter().zip(&rev) {
            assert!((f - r).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_mode_spreads_mass_evenly() {
        let targets = SlotTargets::build(&[], &ids("bcd"), SlotWeighting::Uniform);
        let row = targets.weight_row(0);
        for c in ["b", "c", "d"] {
            let w = row[Vocab::encode_letter(c.chars().next().unwrap())];
            assert!((w - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn span_center_is_left_of_middle_for_even_spans() {
        let targets =
            SlotTargets::build(&[], &ids("bcde"), SlotWeighting::default());
        assert_eq!(targets.span_center(0), Some(Vocab::encode_letter('c')));
        let odd = SlotTargets::build(&[], &ids("bcd"), SlotWeighting::default());
        assert_eq!(odd.span_center(0), Some(Vocab::encode_letter('c')));
    }

    #[test]
    #[should_panic(expected = "tau must be positive")]
    fn tau_zero_rejected() {
        balanced_tree_weights(&ids("ab"), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn letters(max_len: usize) -> impl Strategy<Value = Vec<usize>> {
            proptest::collection::vec(0usize..26, 1..=max_len)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn span_partition_law(
                target in letters(12),
                keep_bits in proptest::collection::vec(proptest::bool::ANY, 12),
            ) {
                let alignment: Vec<usize> = (0..target.len())
                    .filter(|&i| keep_bits[i])
                    .collect();
                let spans = slot_spans(&alignment, &target);
                prop_assert_eq!(spans.len(), alignment.len() + 1);
                let missing: Vec<usize> = (0..target.len())
                    .filter(|i| !alignment.contains(i))
                    .map(|i| target[i])
                    .collect();
                let concatenated: Vec<usize> = spans.iter().flatten().cloned().collect();
                prop_assert_eq!(concatenated, missing);
            }

            #[test]
            fn weight_rows_always_sum_to_one(
                span in proptest::collection::vec(0usize..26, 0..=8),
                tau in 0.05f32..4.0,
            ) {
                let row = balanced_tree_weights(&span, tau);
                let sum: f32 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }
}
