//! Counter-based deterministic RNG with derivable streams.
//!
//! All pipeline randomness flows from one seed. Independent streams are
//! derived by hashing string tags (vehicle ids, trip ids, stage names) and
//! sweep indices into the key, so results never depend on scheduling order:
//! two workers drawing from streams derived with different tags cannot
//! perturb each other. Output is `mix64(key + counter * GOLDEN)`, i.e. a
//! pure function of (key, counter), stable across platforms.
//!
//! Not cryptographically secure; never use for secrets.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer; bijective on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic counter-based RNG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ GOLDEN),
            counter: 0,
        }
    }

    /// Derive an independent stream keyed by a string tag.
    pub fn derive(&self, tag: &str) -> Self {
        Self {
            key: mix64(self.key ^ fnv1a(tag.as_bytes())),
            counter: 0,
        }
    }

    /// Derive an independent stream keyed by an integer (e.g. sweep index).
    pub fn derive_index(&self, index: u64) -> Self {
        Self {
            key: mix64(self.key.wrapping_add(mix64(index ^ GOLDEN))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_value(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in [0, 1), 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_value() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in (0, 1]; safe as a log() argument.
    #[inline]
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_value() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Rejection sampling to kill modulo bias.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_value();
            if v < zone {
                return v % n;
            }
        }
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_value() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_value()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_value().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
