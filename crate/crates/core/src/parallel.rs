//! Seeded, schedule-independent parallel loops.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Rows per RNG stream. Fixed so that results do not depend on the thread count.
pub const CHUNK: usize = 4096;

/// RNG for chunk `k` of a run seeded with `seed`.
pub fn stream(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Runs `f` on consecutive index ranges of length [`CHUNK`], each with its
/// own RNG stream, and returns the results in range order.
pub fn map_chunks<R, F>(n: usize, seed: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>, &mut ChaCha8Rng) -> R + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k);
            f(k * CHUNK..((k + 1) * CHUNK).min(n), &mut rng)
        })
        .collect()
}

/// Applies the thread cap from `CAUSALBIAS_THREADS`, if set. Has no effect
/// once the global pool exists.
pub fn init_threads_from_env() {
    if let Some(n) = std::env::var("CAUSALBIAS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
