//! Counter-based deterministic pseudo-random numbers.
//!
//! Every stochastic choice in the pipeline (crop origins, boosting-round
//! subsampling) is keyed by `(seed, stream, counter)` so that results are
//! identical across runs and thread counts, with no shared mutable state.

/// SplitMix64 finalizer. Good avalanche, cheap, stable across platforms.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A tiny counter-based generator. Two instances built from the same
/// `(seed, stream)` pair emit the same sequence.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
    counter: u64,
}

impl DetRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        // Mix the stream id in twice so nearby (seed, stream) pairs decorrelate.
        let state = splitmix64(seed ^ splitmix64(stream.wrapping_mul(0xa076_1d64_78bd_642f)));
        DetRng { state, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix64(
            self.state
                .wrapping_add(self.counter.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        )
    }

    /// Uniform in `[0, bound)`. `bound` must be nonzero.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        // Multiply-shift bounded sampling; bias is negligible for our bounds
        // (crop offsets, row counts) and determinism is what matters here.
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; used only by synthetic data helpers.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11).max(1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
