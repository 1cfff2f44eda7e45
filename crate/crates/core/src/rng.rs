//! Deterministic, named random streams.
//!
//! Every stochastic choice in the crate draws from an explicitly passed
//! ChaCha stream derived from (seed, stream id). Streams never alias, so
//! changing one consumer cannot shift another consumer's draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Insertion-model parameter initialization.
pub const STREAM_INIT_INSERTION: u64 = 1;
/// Deletion-model parameter initialization.
pub const STREAM_INIT_DELETION: u64 = 2;
/// All per-step training randomness (partial sampling, adversarial draws,
/// dropout). Checkpointed by word position.
pub const STREAM_TRAIN: u64 = 3;
/// Dataset generation.
pub const STREAM_DATA: u64 = 4;
/// Per-epoch shuffles use `STREAM_SHUFFLE_BASE + epoch`, so a resumed run
/// can reconstruct any epoch's permutation without replaying earlier ones.
pub const STREAM_SHUFFLE_BASE: u64 = 1 << 32;

/// A named stream of the base seed.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// The shuffle stream for one epoch.
pub fn shuffle_stream(seed: u64, epoch: u64) -> ChaCha8Rng {
    stream(seed, STREAM_SHUFFLE_BASE.wrapping_add(epoch))
}

/// Draw a sorted k-subset of 0..n by partial Fisher-Yates.
///
/// Hand-rolled so the draw sequence is pinned by this crate, not by a
/// dependency's algorithm choice.
pub fn sample_sorted_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "subset size {k} exceeds population {n}");
    use rand::Rng;
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    let mut picked = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}
