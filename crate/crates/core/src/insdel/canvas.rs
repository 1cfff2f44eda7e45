//! The working hypothesis: `[CLS] source [SEP] target-so-far [SEP]`.

use super::vocab::{Vocab, TOKEN_CLS, TOKEN_SEP};

/// A canvas over the fixed layout `[CLS] source [SEP] target [SEP]`, with
/// segment 0 covering `[CLS]`, the source, and the first `[SEP]`, and
/// segment 1 the rest.
///
/// During training the canvas carries an alignment: for each target-span
/// token, its index in the full ground-truth target. Alignment indices are
/// strictly increasing, witnessing that the target span is a subsequence of
/// the ground truth. Canvases produced by decoding carry no alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    tokens: Vec<usize>,
    source_len: usize,
    alignment: Option<Vec<usize>>,
}

impl Canvas {
    /// Inference-side constructor: source plus a (possibly empty) partial
    /// target, no alignment.
    pub fn new(source: &[usize], target: &[usize]) -> Self {
        Self::build(source, target, None)
    }

    /// Training-side constructor: kept target tokens with their indices in
    /// the full ground-truth target, in target order.
    pub fn with_alignment(source: &[usize], kept: &[(usize, usize)]) -> Self {
        let target: Vec<usize> = kept.iter().map(|&(_, tok)| tok).collect();
        let alignment: Vec<usize> = kept.iter().map(|&(idx, _)| idx).collect();
        assert!(
            alignment.windows(2).all(|w| w[0] < w[1]),
            "alignment indices must be strictly increasing: {alignment:?}"
        );
        Self::build(source, &target, Some(alignment))
    }

    fn build(source: &[usize], target: &[usize], alignment: Option<Vec<usize>>) -> Self {
        for &id in source.iter().chain(target) {
            assert!(
                Vocab::is_letter(id),
                "canvas content must be letters; got token id {id}"
            );
        }
        if let Some(a) = &alignment {
            assert_eq!(a.len(), target.len(), "one alignment index per target token");
        }
        let mut tokens = Vec::with_capacity(source.len() + target.len() + 3);
        tokens.push(TOKEN_CLS);
        tokens.extend_from_slice(source);
        tokens.push(TOKEN_SEP);
        tokens.extend_from_slice(target);
        tokens.push(TOKEN_SEP);
        Canvas { tokens, source_len: source.len(), alignment }
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// Positions of source tokens in the canvas.
    pub fn source_span(&self) -> std::ops::Range<usize> {
        1..1 + self.source_len
    }

    /// First canvas position of the target span.
    pub fn target_start(&self) -> usize {
        self.source_len + 2
    }

    /// Positions of target-so-far tokens (between the two separators).
    pub fn target_span(&self) -> std::ops::Range<usize> {
        self.target_start()..self.tokens.len() - 1
    }

    pub fn target_len(&self) -> usize {
        self.tokens.len() - self.source_len - 3
    }

    pub fn source_tokens(&self) -> &[usize] {
        &self.tokens[self.source_span()]
    }

    pub fn target_tokens(&self) -> &[usize] {
        &self.tokens[self.target_span()]
    }

    pub fn alignment(&self) -> Option<&[usize]> {
        self.alignment.as_deref()
    }

    /// Segment ids: 0 through the first separator, 1 after it.
    pub fn segments(&self) -> Vec<usize> {
        let boundary = self.source_len + 1;
        (0..self.tokens.len()).map(|i| usize::from(i > boundary)).collect()
    }

    /// One insertion slot sits immediately left of each target-span token
    /// and of the final `[SEP]`; this returns the anchor position of each
    /// slot, in slot order. Slot count is always `target_len + 1`.
    pub fn slot_anchors(&self) -> Vec<usize> {
        (self.target_start()..self.tokens.len()).collect()
    }

    pub fn slot_count(&self) -> usize {
        self.target_len() + 1
    }

    /// Rebuild with tokens inserted left of their anchors. `insertions`
    /// maps slot index to token, at most one per slot; all are applied
    /// simultaneously. The result carries no alignment.
    pub fn insert_at_slots(&self, insertions: &[(usize, usize)]) -> Canvas {
        let slots = self.slot_count();
        let mut per_slot: Vec<Option<usize>> = vec![None; slots];
        for &(slot, token) in insertions {
            assert!(slot < slots, "slot {slot} out of range ({slots} slots)");
            assert!(per_slot[slot].is_none(), "two insertions in slot {slot}");
            per_slot[slot] = Some(token);
        }
        let old_target = self.target_tokens();
        let mut new_target = Vec::with_capacity(old_target.len() + insertions.len());
        for (k, maybe_tok) in per_slot.iter().enumerate() {
            if let Some(tok) = maybe_tok {
                new_target.push(*tok);
            }
            if k < old_target.len() {
                new_target.push(old_target[k]);
            }
        }
        Canvas::new(self.source_tokens(), &new_target)
    }

    /// Rebuild with the given target-span positions removed (canvas
    /// positions, not target offsets). Structural and source positions are
    /// rejected. The result carries no alignment.
    pub fn remove_positions(&self, positions: &[usize]) -> Canvas {
        let span = self.target_span();
        for &p in positions {
            assert!(
                span.contains(&p),
                "position {p} is not a target-span content token"
            );
        }
        let new_target: Vec<usize> = span
            .clone()
            .filter(|p| !positions.contains(p))
            .map(|p| self.tokens[p])
            .collect();
        Canvas::new(self.source_tokens(), &new_target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insdel::vocab::Vocab;

    #[test]
    fn empty_target_layout_and_single_slot() {
        let source = Vocab::encode_word("cdefg");
        let canvas = Canvas::new(&source, &[]);
        // [CLS] c d e f g [SEP] [SEP]
        assert_eq!(canvas.len(), 8);
        assert_eq!(canvas.tokens()[0], TOKEN_CLS);
        assert_eq!(canvas.tokens()[6], TOKEN_SEP);
        assert_eq!(canvas.tokens()[7], TOKEN_SEP);
        assert_eq!(canvas.slot_count(), 1);
        assert_eq!(canvas.slot_anchors(), vec![7]);
        assert_eq!(canvas.target_len(), 0);
    }

    #[test]
    fn canvas_length_is_source_plus_target_plus_three() {
        let source = Vocab::encode_word("efghijklm");
        let target = Vocab::encode_word("pvw");
        let canvas = Canvas::new(&source, &target);
        assert_eq!(canvas.len(), 9 + 3 + 3);
        assert_eq!(canvas.target_tokens(), target.as_slice());
    }

    #[test]
    fn partial_target_slots_anchor_left_of_each_token_and_final_sep() {
        // source e..m with partial target "p v w": slots left of p, v, w,
        // and the final [SEP]
        let source = Vocab::encode_word("efghijklm");
        let kept: Vec<(usize, usize)> =
            vec![(1, Vocab::encode_letter('p')), (7, Vocab::encode_letter('v')), (8, Vocab::encode_letter('w'))];
        let canvas = Canvas::with_alignment(&source, &kept);
        assert_eq!(canvas.slot_count(), 4);
        let anchors = canvas.slot_anchors();
        assert_eq!(anchors.len(), 4);
        assert_eq!(canvas.tokens()[anchors[0]], Vocab::encode_letter('p'));
        assert_eq!(canvas.tokens()[anchors[1]], Vocab::encode_letter('v'));
        assert_eq!(canvas.tokens()[anchors[2]], Vocab::encode_letter('w'));
        assert_eq!(canvas.tokens()[anchors[3]], TOKEN_SEP);
    }

    #[test]
    fn segments_split_at_first_separator() {
        let canvas = Canvas::new(&Vocab::encode_word("ab"), &Vocab::encode_word("kl"));
        // [CLS] a b [SEP] k l [SEP]
        assert_eq!(canvas.segments(), vec![0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    #[should_panic(expected = "must be letters")]
    fn structural_tokens_rejected_inside_input() {
        Canvas::new(&[TOKEN_SEP], &[]);
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn alignment_must_witness_a_subsequence() {
        Canvas::with_alignment(&Vocab::encode_word("ab"), &[(3, 0), (1, 1)]);
    }

    #[test]
    fn simultaneous_insertion_left_of_anchors() {
        let canvas = Canvas::new(&Vocab::encode_word("ab"), &Vocab::encode_word("ky"));
        // slots: left of k (0), left of y (1), left of final sep (2)
        let out = canvas.insert_at_slots(&[
            (0, Vocab::encode_letter('j')),
            (2, Vocab::encode_letter('z')),
        ]);
        assert_eq!(Vocab::decode_word(out.target_tokens()), "jkyz");
        assert!(out.alignment().is_none());
    }

    #[test]
    fn remove_positions_drops_only_target_content() {
        let canvas = Canvas::new(&Vocab::encode_word("ab"), &Vocab::encode_word("kxy"));
        let span = canvas.target_span();
        let out = canvas.remove_positions(&[span.start + 1]);
        assert_eq!(Vocab::decode_word(out.target_tokens()), "ky");
    }

    #[test]
    #[should_panic(expected = "not a target-span content token")]
    fn remove_positions_rejects_source_positions() {
        let canvas = Canvas::new(&Vocab::encode_word("ab"), &Vocab::encode_word("k"));
        canvas.remove_positions(&[1]);
    }

    #[test]
    fn deleting_every_target_token_yields_single_slot() {
        let canvas = Canvas::new(&Vocab::encode_word("abc"), &Vocab::encode_word("xy"));
        let span: Vec<usize> = canvas.target_span().collect();
        let out = canvas.remove_positions(&span);
        assert_eq!(out.target_len(), 0);
        assert_eq!(out.slot_count(), 1);
    }
}
