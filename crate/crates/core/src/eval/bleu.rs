//! Corpus BLEU over character tokens.
//!
//! Geometric mean of modified 1..=4-gram precisions with counts pooled over
//! the corpus, brevity penalty `exp(1 - r/c)` when `c < r`, and no
//! smoothing: a zero n-gram precision makes the score 0. The order is
//! capped at the shortest reference length when that is below 4.

use std::collections::HashMap;

const MAX_ORDER: usize = 4;

fn ngram_counts(seq: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts: HashMap<&[char], usize> = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Score candidates against single references; sequences are compared as
/// character token lists. Scores lie in [0, 100]; identical corpora score
/// exactly 100.
pub fn bleu_corpus(candidates: &[String], references: &[String]) -> f64 {
    assert!(!candidates.is_empty(), "bleu_corpus on an empty corpus");
    assert_eq!(
        candidates.len(),
        references.len(),
        "bleu_corpus: {} candidates vs {} references",
        candidates.len(),
        references.len()
    );
    let cands: Vec<Vec<char>> = candidates.iter().map(|s| s.chars().collect()).collect();
    let refs: Vec<Vec<char>> = references.iter().map(|s| s.chars().collect()).collect();

    let shortest_ref = refs.iter().map(|r| r.len()).min().unwrap();
    let order = MAX_ORDER.min(shortest_ref.max(1));

    let mut clipped = vec![0usize; order];
    let mut total = vec![0usize; order];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, reference) in cands.iter().zip(&refs) {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=order {
            let c_counts = ngram_counts(cand, n);
            let r_counts = ngram_counts(reference, n);
            for (gram, &count) in &c_counts {
                total[n - 1] += count;
                clipped[n - 1] += count.min(r_counts.get(gram).copied().unwrap_or(0));
            }
        }
    }

    if cand_len == 0 {
        return 0.0;
    }
    let mut log_precision_sum = 0.0f64;
    for n in 0..order {
        if total[n] == 0 || clipped[n] == 0 {
            return 0.0;
        }
        log_precision_sum += (clipped[n] as f64 / total[n] as f64).ln();
    }
    let brevity = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    100.0 * brevity * (log_precision_sum / order as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owned(pairs: &[(&str, &str)]) -> (Vec<String>, Vec<String>) {
        (
            pairs.iter().map(|(c, _)| c.to_string()).collect(),
            pairs.iter().map(|(_, r)| r.to_string()).collect(),
        )
    }

    #[test]
    fn identical_corpora_score_exactly_one_hundred() {
        let (c, r) = owned(&[("abcde", "abcde"), ("zyx", "zyx")]);
        assert_eq!(bleu_corpus(&c, &r), 100.0);
    }

    #[test]
    fn single_edit_with_no_common_four_gram_scores_zero() {
        // "abcd" vs "abce": the only 4-gram differs, and no smoothing means
        // a zero precision zeroes the score
        let (c, r) = owned(&[("abcd", "abce")]);
        assert_eq!(bleu_corpus(&c, &r), 0.0);
    }

    #[test]
    fn hand_computed_single_pair() {
        // cand "abcde" vs ref "abcdf": p = (4/5, 3/4, 2/3, 1/2), bp = 1,
        // bleu = 100 * 0.2^(1/4)
        let (c, r) = owned(&[("abcde", "abcdf")]);
        let want = 100.0 * 0.2f64.powf(0.25);
        assert!((bleu_corpus(&c, &r) - want).abs() < 1e-9);
    }

    #[test]
    fn brevity_penalty_applies_when_candidate_is_short() {
        // cand "abcd" vs ref "abcdef": all precisions 1, bp = exp(1 - 6/4)
        let (c, r) = owned(&[("abcd", "abcdef")]);
        let want = 100.0 * (1.0f64 - 6.0 / 4.0).exp();
        assert!((bleu_corpus(&c, &r) - want).abs() < 1e-9);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        let (c, r) = owned(&[("", "abcd")]);
        assert_eq!(bleu_corpus(&c, &r), 0.0);
    }

    #[test]
    fn order_caps_at_shortest_reference() {
        // with a 2-letter reference the order drops to 2, so a perfect
        // match still scores 100 instead of dividing by zero
        let (c, r) = owned(&[("ab", "ab"), ("abcde", "abcde")]);
        assert_eq!(bleu_corpus(&c, &r), 100.0);
    }

    #[test]
    #[should_panic(expected = "empty corpus")]
    fn empty_corpus_is_a_contract_violation() {
        bleu_corpus(&[], &[]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn word() -> impl Strategy<Value = String> {
            proptest::collection::vec(proptest::char::range('a', 'z'), 1..12)
                .prop_map(|cs| cs.into_iter().collect())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn pair_order_does_not_matter(
                pairs in proptest::collection::vec((word(), word()), 1..20),
                seed in 0u64..1000,
            ) {
                let cands: Vec<String> = pairs.iter().map(|(c, _)| c.clone()).collect();
                let refs: Vec<String> = pairs.iter().map(|(_, r)| r.clone()).collect();
                let base = bleu_corpus(&cands, &refs);

                // deterministic shuffle of the pair order
                let mut idx: Vec<usize> = (0..pairs.len()).collect();
                let mut s = seed;
                for i in (1..idx.len()).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    idx.swap(i, (s >> 33) as usize % (i + 1));
                }
                let cands2: Vec<String> = idx.iter().map(|&i| cands[i].clone()).collect();
                let refs2: Vec<String> = idx.iter().map(|&i| refs[i].clone()).collect();
                let shuffled = bleu_corpus(&cands2, &refs2);
                prop_assert!((base - shuffled).abs() < 1e-9);
            }

            #[test]
            fn self_corpus_is_always_perfect(
                words in proptest::collection::vec(word(), 1..20),
            ) {
                prop_assert_eq!(bleu_corpus(&words, &words), 100.0);
            }

            #[test]
            fn scores_stay_in_range(
                pairs in proptest::collection::vec((word(), word()), 1..20),
            ) {
                let cands: Vec<String> = pairs.iter().map(|(c, _)| c.clone()).collect();
                let refs: Vec<String> = pairs.iter().map(|(_, r)| r.clone()).collect();
                let score = bleu_corpus(&cands, &refs);
                prop_assert!((0.0..=100.0).contains(&score));
            }
        }
    }
}
