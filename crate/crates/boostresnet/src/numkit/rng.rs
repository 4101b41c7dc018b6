//! SplitMix64 pseudo-random generator.
//!
//! Implemented in-repo so a seed reproduces the same stream bit-identically
//! regardless of platform or library versions. SplitMix64 is the 64-bit mixer
//! from Steele, Lea & Flood's "Fast Splittable Pseudorandom Number Generators";
//! state advances by a fixed odd constant and each output is a finalized hash
//! of the state, so the u64 stream is exactly reproducible.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    spare_gaussian: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            spare_gaussian: None,
        }
    }

    /// Derive the seed of a named sub-stream. Streams with distinct tags are
    /// decorrelated; the same (seed, tag) pair always yields the same stream.
    pub fn derive_seed(seed: u64, tag: &str) -> u64 {
        // FNV-1a over the tag bytes, folded into the seed through the mixer.
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in tag.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        mix64(seed ^ h)
    }

    /// Sub-stream additionally keyed by an index (e.g. a boosting round).
    pub fn derive_seed_indexed(seed: u64, tag: &str, index: u64) -> u64 {
        mix64(Self::derive_seed(seed, tag) ^ mix64(index.wrapping_add(GOLDEN_GAMMA)))
    }

    pub fn with_stream(seed: u64, tag: &str) -> Self {
        Rng::new(Self::derive_seed(seed, tag))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn next_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for n << 2^64.
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via the polar (Marsaglia) method.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(v) = self.spare_gaussian.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare_gaussian = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64], stddev: f64) {
        for v in out {
            *v = self.gaussian() * stddev;
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_usize(i + 1);
            items.swap(i, j);
        }
    }
}
