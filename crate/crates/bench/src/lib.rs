//! Seeded inputs shared by the benchmarks.

use avdiar::{Segment, SegmentList};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cost_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect()
}

/// Alternating turns of `speakers` speakers over `seconds`, with occasional
/// overlap.
pub fn turns(speakers: usize, seconds: f64, seed: u64) -> SegmentList {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut segs = Vec::new();
    while t < seconds {
        let d = rng.random_range(0.5..4.0);
        let spk = rng.random_range(0..speakers);
        segs.push(Segment::new(format!("s{spk}"), t, t + d));
        t += d + rng.random_range(-0.5..1.0f64);
        t = t.max(segs.last().unwrap().onset + 0.1);
    }
    SegmentList::new(segs).expect("positive durations")
}

pub fn noise(seconds: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..(seconds * 16_000.0) as usize)
        .map(|_| rng.random_range(-0.3..0.3))
        .collect()
}
