//! Deterministic counter-based random numbers.
//!
//! Every stochastic choice in the crate — weight initialization, dropout
//! masks, shuffling, synthetic trajectories — draws from [`DetRng`], a
//! counter-based generator: output `i` is a pure hash of `(key, i)`. That
//! makes streams cheap to fork (derive a new key, counter restarts at zero)
//! and guarantees that a single 64-bit seed reproduces a whole run
//! bit-for-bit, independent of how many values other components consumed.

/// Counter-based pseudo-random generator (splitmix64 finalizer).
///
/// Not cryptographic; statistical quality is more than enough for dropout
/// masks and toy trajectories.
#[derive(Debug, Clone)]
pub struct DetRng {
    key: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { key: seed, counter: 0 }
    }

    /// Fork an independent stream keyed by an integer salt.
    ///
    /// Streams with different salts are statistically independent even for
    /// adjacent seeds, because the salt passes through the mixer too.
    pub fn derive(seed: u64, salt: u64) -> Self {
        DetRng::new(mix(seed ^ mix(salt.wrapping_mul(GOLDEN).wrapping_add(GOLDEN))))
    }

    /// Fork an independent stream keyed by a string label (e.g. a parameter
    /// name), so initialization does not depend on declaration order.
    pub fn for_label(seed: u64, label: &str) -> Self {
        // FNV-1a over the label, then mixed together with the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in label.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        DetRng::new(mix(seed ^ mix(h)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform in `[-bound, bound)`.
    pub fn symmetric(&mut self, bound: f64) -> f64 {
        self.range(-bound, bound)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is ~n/2^64, irrelevant at the sizes used here.
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
