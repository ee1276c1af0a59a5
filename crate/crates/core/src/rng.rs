//! Deterministic random-number streams.
//!
//! Every stochastic component draws from a [`ChaCha8Rng`] seeded by a
//! *substream key*: the root seed folded with a list of labels through
//! splitmix64. Substreams are independent of each other and of the order in
//! which sibling components run, so parallel schedules and sequential
//! schedules draw identical numbers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// splitmix64 finalizer: a fast, well-mixed 64-bit permutation.
///
/// Used only for seed derivation, never as the sampling generator.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a label string to a 64-bit value (FNV-1a; stable across platforms).
#[inline]
fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a substream seed from a root seed and a list of labels.
///
/// Labels may mix strings (component names) and indices (task/episode
/// numbers); see [`StreamKey`] for ergonomic construction.
pub fn derive_seed(root: u64, labels: &[u64]) -> u64 {
    let mut state = splitmix64(root ^ 0x6a09_e667_f3bc_c908);
    for &l in labels {
        state = splitmix64(state ^ splitmix64(l));
    }
    state
}

/// A named substream key: root seed plus an ordered list of labels.
#[derive(Debug, Clone)]
pub struct StreamKey {
    root: u64,
    labels: Vec<u64>,
}

impl StreamKey {
    /// Start a key from the root seed.
    pub fn new(root: u64) -> Self {
        StreamKey {
            root,
            labels: Vec::new(),
        }
    }

    /// Append a string label (component or phase name).
    pub fn with(mut self, label: &str) -> Self {
        self.labels.push(hash_label(label));
        self
    }

    /// Append an integer label (task index, episode index, epoch...).
    pub fn with_index(mut self, index: u64) -> Self {
        self.labels.push(index);
        self
    }

    /// The derived 64-bit seed for this substream.
    pub fn seed(&self) -> u64 {
        derive_seed(self.root, &self.labels)
    }

    /// Instantiate the generator for this substream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

/// Draw one N(0, std²) sample.
#[inline]
pub fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    std * z
}

/// Fill a slice with i.i.d. N(0, std²) samples.
pub fn fill_gaussian(rng: &mut ChaCha8Rng, std: f64, out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = gaussian(rng, std);
    }
}
