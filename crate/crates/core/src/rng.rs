//! Counter-based keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is a SplitMix64 hash
//! of `(seed, domain, a, b)`. Streams are independent of execution order.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

/// Purpose of a stream; keeps e.g. replica 3's initial draw apart from
/// replica 3's step noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Step = 2,
    Bootstrap = 3,
    MonteCarlo = 4,
    Probe = 5,
    PairShift = 6,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The stream for key `(seed, domain, a, b)`.
pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut mix = splitmix64(&mut state);
    for word in [domain as u64, a, b] {
        state ^= word.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(mix);
        mix = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// A draw from `U[0, 1)`.
#[inline]
pub fn uniform<R: rand_core::RngCore>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardUniform.sample(rng)
}

/// A standard normal draw.
#[inline]
pub fn normal<R: rand_core::RngCore>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::RngCore;

    #[test]
    fn keys_separate_streams() {
        let mut a = stream(7, Domain::Step, 0, 1);
        let mut b = stream(7, Domain::Step, 1, 0);
        let mut c = stream(7, Domain::Init, 0, 1);
        let mut a2 = stream(7, Domain::Step, 0, 1);
        let x = a.next_u64();
        assert_eq!(x, a2.next_u64());
        assert_ne!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
    }
}
