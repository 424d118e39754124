use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha3::{Digest, Sha3_256};

/// Deterministic random stream: ChaCha20 keyed by a 256-bit seed.
///
/// Sub-streams are derived by hashing `(seed, label, indices)` with SHA3-256,
/// so a client's randomness in round `t` does not depend on how many draws
/// any other party made before it.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self { inner: ChaCha20Rng::from_seed(seed) }
    }

    /// Expands a small integer seed (CLI and config files use these).
    pub fn from_u64(seed: u64) -> Self {
        Self::from_seed(Self::derive_seed(&[0u8; 32], b"zkfl/u64-seed", &[seed]))
    }

    pub fn derive_seed(parent: &[u8; 32], label: &[u8], indices: &[u64]) -> [u8; 32] {
        let mut h = Sha3_256::new();
        h.update(b"zkfl/rng/v1");
        h.update(parent);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label);
        for i in indices {
            h.update(i.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn derive(parent: &[u8; 32], label: &[u8], indices: &[u64]) -> Self {
        Self::from_seed(Self::derive_seed(parent, label, indices))
    }

    /// Splits off an independent child stream, advancing `self` by 32 bytes.
    pub fn fork(&mut self, label: &[u8]) -> Self {
        let mut parent = [0u8; 32];
        self.inner.fill_bytes(&mut parent);
        Self::derive(&parent, label, &[])
    }

    pub fn seed_bytes(&mut self) -> [u8; 32] {
        let mut s = [0u8; 32];
        self.inner.fill_bytes(&mut s);
        s
    }

    /// Uniform in `[0, bound)` by masked rejection; `bound > 0`.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let mask = u64::MAX.checked_shr((bound - 1).leading_zeros()).unwrap_or(0);
        loop {
            let v = self.inner.next_u64() & mask;
            if v < bound {
                return v;
            }
        }
    }

    /// Uniform in `(0, 1]`, 53 bits.
    pub fn unit_open0(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::from_u64(7);
        let mut b = Rng::from_u64(7);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, (0..16).map(|_| Rng::from_u64(8).next_u64()).collect::<Vec<_>>());
    }

    #[test]
    fn derived_streams_are_labelled() {
        let seed = [3u8; 32];
        let mut a = Rng::derive(&seed, b"client", &[1, 2]);
        let mut b = Rng::derive(&seed, b"client", &[1, 3]);
        let mut c = Rng::derive(&seed, b"server", &[1, 2]);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert!(x != y && x != z && y != z);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = Rng::from_u64(1);
        for bound in [1u64, 2, 3, 17, 3329, 7681, u64::MAX] {
            for _ in 0..200 {
                assert!(r.below(bound) < bound);
            }
        }
        for _ in 0..1000 {
            let u = r.unit_open0();
            assert!(u > 0.0 && u <= 1.0);
        }
    }
}
