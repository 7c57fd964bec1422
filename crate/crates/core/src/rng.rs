//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, step, lane)`, so a particle's
//! noise does not depend on how the ensemble is split across worker threads.
//! The mixer is the SplitMix64 finalizer applied to a chained key.

/// Lane used for the Brownian increments of a particle.
pub const LANE_BROWNIAN: u64 = 0;
/// Lane used for the Brownian-bridge absorption Bernoulli draws.
pub const LANE_BRIDGE: u64 = 1;
/// Lane used for initial-law sampling.
pub const LANE_INITIAL: u64 = 2;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Hashes a key tuple to 64 uniformly distributed bits.
#[inline]
pub fn hash4(seed: u64, stream: u64, step: u64, lane: u64) -> u64 {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    h = mix64(h ^ stream.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019));
    h = mix64(h ^ step.wrapping_mul(0xd1b5_4a32_d192_ed03).wrapping_add(GOLDEN));
    mix64(h ^ lane.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7).wrapping_add(1))
}

/// Derives a child seed, e.g. one per replication.
#[inline]
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    hash4(seed, index, u64::MAX, u64::MAX)
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    // 53 random bits, shifted off zero so ln() stays finite
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform draw in (0, 1).
#[inline]
pub fn uniform(seed: u64, stream: u64, step: u64, lane: u64) -> f64 {
    to_open_unit(hash4(seed, stream, step, lane))
}

/// Standard normal draw (Box-Muller on two sub-counters of the key).
#[inline]
pub fn normal(seed: u64, stream: u64, step: u64, lane: u64) -> f64 {
    let u1 = to_open_unit(hash4(seed, stream, step, lane << 1));
    let u2 = to_open_unit(hash4(seed, stream, step, (lane << 1) | 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Sequential convenience wrapper over the counter functions.
#[derive(Debug, Clone)]
pub struct CounterStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl CounterStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream, counter: 0 }
    }

    pub fn next_uniform(&mut self) -> f64 {
        let u = uniform(self.seed, self.stream, self.counter, LANE_INITIAL);
        self.counter += 1;
        u
    }

    pub fn next_normal(&mut self) -> f64 {
        let z = normal(self.seed, self.stream, self.counter, LANE_INITIAL);
        self.counter += 1;
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_key() {
        assert_eq!(normal(1, 2, 3, 0).to_bits(), normal(1, 2, 3, 0).to_bits());
        assert_ne!(normal(1, 2, 3, 0), normal(1, 2, 4, 0));
        assert_ne!(normal(1, 2, 3, 0), normal(1, 3, 3, 0));
        assert_ne!(uniform(1, 2, 3, LANE_BRIDGE), uniform(2, 2, 3, LANE_BRIDGE));
    }

    #[test]
    fn normal_moments() {
        let n = 200_000u64;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let z = normal(42, i, 7, LANE_BROWNIAN);
            s1 += z;
            s2 += z * z;
            s4 += z * z * z * z;
        }
        let nf = n as f64;
        assert!((s1 / nf).abs() < 0.01);
        assert!((s2 / nf - 1.0).abs() < 0.02);
        assert!((s4 / nf - 3.0).abs() < 0.1);
    }

    #[test]
    fn uniform_is_open_and_centered() {
        let n = 100_000u64;
        let mut s = 0.0;
        for i in 0..n {
            let u = uniform(9, i, 0, LANE_BRIDGE);
            assert!(u > 0.0 && u < 1.0);
            s += u;
        }
        assert!((s / n as f64 - 0.5).abs() < 0.005);
    }
}
