//! Reproducible random-number streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose
//! 256-bit seed is derived deterministically from a master seed, a purpose
//! tag and a list of indices (replicate number, sample-size index, ...).
//! Two streams with different derivation paths are statistically
//! independent, so parallel work units may each own their stream without
//! any ordering constraints. The derivation uses the splitmix64 finalizer,
//! which is fixed here rather than taken from the standard library so the
//! mapping never changes across Rust releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keeping unrelated draws on disjoint streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Draws from a basic family's sampler.
    Sample,
    /// Component-membership draws for mixed-model sampling.
    Membership,
    /// Monte Carlo expectation draws.
    MonteCarlo,
    /// One (replicate, sample size) cell of a consistency experiment.
    ExperimentCell,
    /// Test-suite randomization.
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Sample => 0x01,
            Purpose::Membership => 0x02,
            Purpose::MonteCarlo => 0x03,
            Purpose::ExperimentCell => 0x04,
            Purpose::Test => 0x05,
        }
    }
}

/// splitmix64 finalizer; the constants are the published ones.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha8 stream from `(master, purpose, indices)`.
pub fn stream(master: u64, purpose: Purpose, indices: &[u64]) -> ChaCha8Rng {
    let mut state = master ^ 0x6a09_e667_f3bc_c908;
    let mut absorb = |v: u64| {
        state ^= v;
        let _ = splitmix64(&mut state);
    };
    absorb(purpose.tag());
    absorb(indices.len() as u64);
    for &ix in indices {
        absorb(ix);
    }

    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::RngCore;

    #[test]
    fn same_path_same_stream() {
        let mut a = stream(42, Purpose::Sample, &[1, 2]);
        let mut b = stream(42, Purpose::Sample, &[1, 2]);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_paths_diverge() {
        let mut a = stream(42, Purpose::Sample, &[1, 2]);
        let mut b = stream(42, Purpose::Sample, &[2, 1]);
        let mut c = stream(42, Purpose::Membership, &[1, 2]);
        let mut d = stream(43, Purpose::Sample, &[1, 2]);
        let first = a.next_u64();
        assert_ne!(first, b.next_u64());
        assert_ne!(first, c.next_u64());
        assert_ne!(first, d.next_u64());
    }

    #[test]
    fn index_list_length_matters() {
        // [1] and [1, 0] must not collide even though 0 is an identity-ish value.
        let mut a = stream(7, Purpose::Test, &[1]);
        let mut b = stream(7, Purpose::Test, &[1, 0]);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
