//! Deterministic seeded randomness for initial data and probe vectors.
//!
//! Single generator for the whole crate so that equal seeds give
//! byte-identical outputs across platforms and releases. SplitMix64 is
//! stateless beyond one u64 and has a stable published reference sequence,
//! which is exactly the cross-version guarantee general-purpose RNG crates
//! decline to make.

/// SplitMix64 (Steele, Lea, Flood 2014 reference constants).
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Log-uniform in [lo, hi); requires 0 < lo < hi.
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo > 0.0 && hi > lo);
        (self.uniform(lo.ln(), hi.ln())).exp()
    }

    /// Derive an independent stream; used so sample set k is a prefix of
    /// sample set 2k when scans double their budget. Stateless: fork(k)
    /// depends only on the current state and the tag, so scans can address
    /// samples randomly and doubling a budget keeps the existing prefix.
    pub fn fork(&self, tag: u64) -> SplitMix64 {
        SplitMix64::new(self.state ^ tag.wrapping_mul(0xA0761D6478BD642F))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sequence_seed_1234567() {
        // First three outputs of the published SplitMix64 reference for this
        // seed; frozen so any tweak to the mixer shows up immediately.
        let mut r = SplitMix64::new(1234567);
        assert_eq!(r.next_u64(), 6457827717110365317);
        assert_eq!(r.next_u64(), 3203168211198807973);
        assert_eq!(r.next_u64(), 9817491932198370423);
    }

    #[test]
    fn unit_interval_bounds() {
        let mut r = SplitMix64::new(42);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn deterministic_fork() {
        let a = SplitMix64::new(7);
        let b = SplitMix64::new(7);
        assert_eq!(a.fork(3).next_u64(), b.fork(3).next_u64());
        // Random access: forking never perturbs the parent.
        let mut c = SplitMix64::new(7);
        let _ = c.fork(99);
        assert_eq!(c.next_u64(), SplitMix64::new(7).next_u64());
    }
}
