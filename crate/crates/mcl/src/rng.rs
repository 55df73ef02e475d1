//! Deterministic pseudo-random numbers.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014): state advances by
//! the golden-gamma constant 0x9E3779B97F4A7C15 and each output is the state
//! passed through two xor-shift-multiply rounds (0xBF58476D1CE4E5B9,
//! 0x94D049BB133111EB). The algorithm is fully specified here so any other
//! implementation, in any language, reproduces the same streams bit for bit.
//!
//! Floats are derived as `(next_u64() >> 11) * 2^-53`, giving a uniform
//! double in [0, 1) with 53 random mantissa bits. Gaussian samples use the
//! polar Box-Muller transform with both outputs consumed in order.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent child stream; `tag` separates streams sharing one seed.
    pub fn fork(&self, tag: u64) -> Self {
        let mut probe = SplitMix64::new(self.state ^ tag.wrapping_mul(0xA076_1D64_78BD_642F));
        SplitMix64::new(probe.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform f64 in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform f64 in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    /// always tiny relative to 2^64 so the bias is unobservable.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller on two uniforms.
    pub fn normal(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        if u1 < 1e-300 {
            u1 = 1e-300;
        }
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniformly random permutation of {0..n-1}.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
