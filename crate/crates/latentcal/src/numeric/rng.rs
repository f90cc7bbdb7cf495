//! Deterministic random numbers.
//!
//! xoshiro256++ seeded through SplitMix64, implemented here so that every
//! sequence is bit-exact across platforms and toolchains. The same seed
//! always produces the same stream; no global state, no OS entropy.
//!
//! Constants are the reference ones: the SplitMix64 increment
//! `0x9E3779B97F4A7C15` with finalizing multipliers `0xBF58476D1CE4E5B9`
//! and `0x94D049BB133111EB`, and the xoshiro256++ rotations (23, 45) with
//! the `+` scrambler.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derived seed for substream `index` of `seed`; order-independent.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)
}

/// Seeded xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    /// Expand a 64-bit seed into the full 256-bit state via SplitMix64.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { s }
    }

    /// Independent generator for substream `index` of `seed`. Used wherever
    /// per-item streams must not depend on iteration order.
    pub fn substream(seed: u64, index: u64) -> Self {
        Self::from_seed(substream_seed(seed, index))
    }

    /// Child generator seeded from this one's next output.
    pub fn fork(&mut self) -> Rng {
        Rng::from_seed(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n` via the multiply-shift method (n > 0).
    pub fn range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per call.
    pub fn normal(&mut self) -> f64 {
        // Shift u1 into (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.range(i + 1);
            xs.swap(i, j);
        }
    }

    /// `n_keep` indices sampled without replacement from `0..n`, ascending.
    pub fn sample_indices(&mut self, n: usize, n_keep: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx.truncate(n_keep);
        idx.sort_unstable();
        idx
    }
}
