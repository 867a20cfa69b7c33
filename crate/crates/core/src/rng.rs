//! Replica-indexed random streams.
//!
//! Every Monte Carlo replica draws from its own ChaCha stream, keyed by the
//! master seed, a per-purpose domain tag and the replica index. Results are
//! therefore independent of how replicas are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A family of independent streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    key: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            key: splitmix64(seed),
        }
    }

    /// Derive a sub-family for a named purpose. Children with distinct tags
    /// never share a stream.
    pub fn child(&self, tag: u64) -> Self {
        Self {
            key: splitmix64(self.key ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    /// Derive a sub-family from a string label.
    pub fn named(&self, label: &str) -> Self {
        // FNV-1a, stable across platforms and releases.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.child(h)
    }

    pub fn replica(&self, index: u64) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(index);
        rng
    }
}

/// Run `n` replicas in parallel, each with its own stream, and collect the
/// results in replica order.
pub fn par_replicas<T, F>(streams: Streams, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.replica(i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Fallible variant of [`par_replicas`]; the first error in replica order wins.
pub fn try_par_replicas<T, E, F>(streams: Streams, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut SimRng) -> Result<T, E> + Sync + Send,
{
    par_replicas(streams, n, f).into_iter().collect()
}
