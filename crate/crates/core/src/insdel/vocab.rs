//! Fixed character vocabulary: 26 lowercase letters, three structural
//! tokens, and the per-slot stop symbol.

/// Letters occupy ids 0..=25 ('a'..='z').
pub const TOKEN_CLS: usize = 26;
pub const TOKEN_SEP: usize = 27;
pub const TOKEN_PAD: usize = 28;
/// Per-slot "stop inserting here" symbol.
pub const TOKEN_EOS_SLOT: usize = 29;
pub const VOCAB_SIZE: usize = 30;

/// Stateless encoder/decoder over the fixed vocabulary.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vocab;

impl Vocab {
    pub fn encode_letter(c: char) -> usize {
        assert!(c.is_ascii_lowercase(), "token {c:?} is not a lowercase letter");
        (c as u8 - b'a') as usize
    }

    pub fn encode_word(s: &str) -> Vec<usize> {
        s.chars().map(Self::encode_letter).collect()
    }

    pub fn is_letter(id: usize) -> bool {
        id < 26
    }

    pub fn is_structural(id: usize) -> bool {
        matches!(id, TOKEN_CLS | TOKEN_SEP | TOKEN_PAD)
    }

    pub fn decode(id: usize) -> char {
        match id {
            0..=25 => (b'a' + id as u8) as char,
            _ => panic!("token id {id} is not a letter"),
        }
    }

    pub fn decode_word(ids: &[usize]) -> String {
        ids.iter().map(|&id| Self::decode(id)).collect()
    }

    /// Display name for trace output.
    pub fn display(id: usize) -> &'static str {
        const LETTERS: [&str; 26] = [
            "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p",
            "q", "r", "s", "t", "u", "v", "w", "x", "y", "z",
        ];
        match id {
            0..=25 => LETTERS[id],
            TOKEN_CLS => "[CLS]",
            TOKEN_SEP => "[SEP]",
            TOKEN_PAD => "[PAD]",
            TOKEN_EOS_SLOT => "[EOS]",
            _ => panic!("token id {id} out of vocabulary"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_has_thirty_stable_ids() {
        assert_eq!(VOCAB_SIZE, 30);
        assert_eq!(Vocab::encode_letter('a'), 0);
        assert_eq!(Vocab::encode_letter('z'), 25);
        assert_eq!(Vocab::decode_word(&Vocab::encode_word("hkbet")), "hkbet");
        assert!(Vocab::is_structural(TOKEN_CLS));
        assert!(Vocab::is_structural(TOKEN_SEP));
        assert!(Vocab::is_structural(TOKEN_PAD));
        assert!(!Vocab::is_structural(TOKEN_EOS_SLOT));
        assert!(!Vocab::is_structural(0));
    }

    #[test]
    #[should_panic(expected = "not a lowercase letter")]
    fn structural_characters_cannot_be_encoded() {
        Vocab::encode_letter('[');
    }
}
