//! Seeded PRNG used everywhere randomness is needed in the simulation.
//!
//! The generator is xorshift64* (shifts 12/25/27, multiplier
//! 0x2545F4914F6CDD1D). It is spelled out here, rather than pulled from a
//! crate, so that traces stay reproducible across implementations: a trace
//! is a pure function of (config, scenario, seed) and the algorithm is part
//! of that contract.

/// splitmix64 step, used to derive independent seeds from one master seed.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xorshift64* stream. State must never be zero; a zero seed is remapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed };
        XorShift64Star { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw. Always consumes exactly one stream value so that
    /// the number of draws per event does not depend on the probability.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}
