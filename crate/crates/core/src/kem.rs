//! MLWE key encapsulation.
//!
//! Textbook module-LWE public-key encryption of a random 256-bit message with
//! per-coefficient rounding, plus a SHA3-256 KDF over the message and a digest
//! of the ciphertext. This is the ML-KEM-768 parameter set without FIPS 203
//! compression or the Fujisaki-Okamoto re-encryption check, so it does not
//! interoperate with FIPS 203 implementations.
//!
//! Decapsulation is total: a mangled ciphertext yields *some* key, and the
//! mismatch surfaces when the symmetric layer fails to authenticate.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha3::{Digest, Sha3_256};
use thiserror::Error;

use crate::ring::{
    sample_cbd, sample_uniform, ModuleVector, RingElement, RingError, RingParams, Rng,
};

const KDF_TAG: &[u8] = b"zkfl/kem/kdf/v1";
const MATRIX_TAG: &[u8] = b"zkfl/kem/matrix/v1";
pub const MESSAGE_BYTES: usize = 32;
pub const SEED_BYTES: usize = 32;

#[derive(Debug, Error)]
pub enum KemError {
    #[error("module rank must be at least 1")]
    ZeroRank,
    #[error("ring degree {0} cannot carry a 256-bit message")]
    DegreeTooSmall(usize),
    #[error("CBD parameter {0} out of range 1..=32")]
    Eta(u32),
    #[error("malformed encoding: {0}")]
    Encoding(#[from] RingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KemParams {
    ring: RingParams,
    k: usize,
    eta1: u32,
    eta2: u32,
}

impl Default for KemParams {
    /// n = 256, k = 3, q = 3329, eta1 = eta2 = 2.
    fn default() -> Self {
        Self {
            ring: RingParams::new(256, 3329).expect("static parameters"),
            k: 3,
            eta1: 2,
            eta2: 2,
        }
    }
}

impl KemParams {
    pub fn new(ring: RingParams, k: usize, eta1: u32, eta2: u32) -> Result<Self, KemError> {
        if k == 0 {
            return Err(KemError::ZeroRank);
        }
        if ring.n() < MESSAGE_BYTES * 8 {
            return Err(KemError::DegreeTooSmall(ring.n()));
        }
        for eta in [eta1, eta2] {
            if !(1..=32).contains(&eta) {
                return Err(KemError::Eta(eta));
            }
        }
        Ok(Self { ring, k, eta1, eta2 })
    }

    pub fn ring(&self) -> RingParams {
        self.ring
    }

    pub fn rank(&self) -> usize {
        self.k
    }

    pub fn encaps_key_bytes(&self) -> usize {
        SEED_BYTES + self.k * self.ring.element_bytes()
    }

    pub fn ciphertext_bytes(&self) -> usize {
        (self.k + 1) * self.ring.element_bytes()
    }

    fn cbd_vector(&self, eta: u32, rng: &mut Rng) -> ModuleVector {
        let elems = (0..self.k).map(|_| sample_cbd(self.ring, eta, rng)).collect();
        ModuleVector::new(elems).expect("k >= 1 and shared params")
    }
}

/// Expands `A[i][j]` from the public seed; `transpose` yields `A^T`.
fn matrix_row(params: &KemParams, seed: &[u8; SEED_BYTES], i: usize, transpose: bool) -> Vec<RingElement> {
    (0..params.k)
        .map(|j| {
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            let mut rng = Rng::derive(seed, MATRIX_TAG, &[r as u64, c as u64]);
            sample_uniform(params.ring, &mut rng)
        })
        .collect()
}

fn mat_vec(params: &KemParams, seed: &[u8; SEED_BYTES], v: &ModuleVector, transpose: bool) -> ModuleVector {
    let elems = (0..params.k)
        .map(|i| {
            let row = ModuleVector::new(matrix_row(params, seed, i, transpose)).expect("k >= 1");
            row.dot(v).expect("matching rank")
        })
        .collect();
    ModuleVector::new(elems).expect("k >= 1")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncapsKey {
    params: KemParams,
    seed_a: [u8; SEED_BYTES],
    t: ModuleVector,
}

impl EncapsKey {
    pub fn params(&self) -> &KemParams {
        &self.params
    }

    /// `seed_A || t`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.seed_a.to_vec();
        out.extend(self.t.to_bytes());
        out
    }

    pub fn from_bytes(params: KemParams, bytes: &[u8]) -> Result<Self, KemError> {
        if bytes.len() != params.encaps_key_bytes() {
            return Err(RingError::Length { expected: params.encaps_key_bytes(), got: bytes.len() }.into());
        }
        let (seed, rest) = bytes.split_at(SEED_BYTES);
        let t = ModuleVector::from_bytes(params.ring, params.k, rest)?;
        Ok(Self { params, seed_a: seed.try_into().expect("split at 32"), t })
    }
}

#[derive(Clone)]
pub struct DecapsKey {
    params: KemParams,
    s: ModuleVector,
}

impl fmt::Debug for DecapsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecapsKey").field("params", &self.params).finish_non_exhaustive()
    }
}

impl DecapsKey {
    pub fn secret(&self) -> &ModuleVector {
        &self.s
    }
}

#[derive(Debug, Clone)]
pub struct KemKeyPair {
    pub ek: EncapsKey,
    pub dk: DecapsKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KemCiphertext {
    u: ModuleVector,
    v: RingElement,
}

impl KemCiphertext {
    /// `u || v`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.u.to_bytes();
        self.v.write_bytes(&mut out);
        out
    }

    pub fn from_bytes(params: &KemParams, bytes: &[u8]) -> Result<Self, KemError> {
        if bytes.len() != params.ciphertext_bytes() {
            return Err(RingError::Length { expected: params.ciphertext_bytes(), got: bytes.len() }.into());
        }
        let split = params.k * params.ring.element_bytes();
        let u = ModuleVector::from_bytes(params.ring, params.k, &bytes[..split])?;
        let v = RingElement::from_bytes(params.ring, &bytes[split..])?;
        Ok(Self { u, v })
    }

    /// The all-zero ciphertext, for totality tests.
    pub fn zero(params: &KemParams) -> Self {
        let u = ModuleVector::new(vec![RingElement::zero(params.ring); params.k]).expect("k >= 1");
        Self { u, v: RingElement::zero(params.ring) }
    }
}

/// 256-bit symmetric key shared through the KEM.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; 32]);

impl SessionKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SessionKey(..)")
    }
}

fn kdf(message: &[u8; MESSAGE_BYTES], ct: &KemCiphertext) -> SessionKey {
    let ct_digest = Sha3_256::digest(ct.to_bytes());
    let mut h = Sha3_256::new();
    h.update(KDF_TAG);
    h.update(message);
    h.update(ct_digest);
    SessionKey(h.finalize().into())
}

fn encode_message(params: &KemParams, m: &[u8; MESSAGE_BYTES]) -> RingElement {
    let half = params.ring.q().div_ceil(2);
    let mut coeffs = vec![0u64; params.ring.n()];
    for (i, c) in coeffs.iter_mut().take(MESSAGE_BYTES * 8).enumerate() {
        if (m[i / 8] >> (i % 8)) & 1 == 1 {
            *c = half;
        }
    }
    RingElement::from_coeffs(params.ring, coeffs).expect("reduced")
}

/// Bit `i` is 1 iff coefficient `i` is nearer to `q/2` than to 0.
fn decode_message(params: &KemParams, w: &RingElement) -> [u8; MESSAGE_BYTES] {
    let q = params.ring.q();
    let mut m = [0u8; MESSAGE_BYTES];
    for (i, &c) in w.coeffs().iter().take(MESSAGE_BYTES * 8).enumerate() {
        let bit = ((2 * c + q / 2) / q) & 1;
        m[i / 8] |= (bit as u8) << (i % 8);
    }
    m
}

fn keygen_with_noise(params: &KemParams, rng: &mut Rng) -> (KemKeyPair, ModuleVector) {
    let mut seed_a = [0u8; SEED_BYTES];
    rand::RngCore::fill_bytes(rng, &mut seed_a);
    let s = params.cbd_vector(params.eta1, rng);
    let e = params.cbd_vector(params.eta1, rng);
    let t = mat_vec(params, &seed_a, &s, false).try_add(&e).expect("matching rank");
    let pair = KemKeyPair {
        ek: EncapsKey { params: *params, seed_a, t },
        dk: DecapsKey { params: *params, s },
    };
    (pair, e)
}

/// `A <- R_q^{k x k}` (from a fresh seed), `s, e <- CBD_eta1^k`, `t = A s + e`.
pub fn kem_keygen(params: &KemParams, rng: &mut Rng) -> KemKeyPair {
    keygen_with_noise(params, rng).0
}

pub fn kem_encaps(ek: &EncapsKey, rng: &mut Rng) -> (KemCiphertext, SessionKey) {
    let params = &ek.params;
    let mut m = [0u8; MESSAGE_BYTES];
    rand::RngCore::fill_bytes(rng, &mut m);
    let r = params.cbd_vector(params.eta1, rng);
    let e1 = params.cbd_vector(params.eta2, rng);
    let e2 = sample_cbd(params.ring, params.eta2, rng);
    let u = mat_vec(params, &ek.seed_a, &r, true).try_add(&e1).expect("matching rank");
    let v = &(&ek.t.dot(&r).expect("matching rank") + &e2) + &encode_message(params, &m);
    let ct = KemCiphertext { u, v };
    let key = kdf(&m, &ct);
    (ct, key)
}

pub fn kem_decaps(dk: &DecapsKey, ct: &KemCiphertext) -> SessionKey {
    let w = &ct.v - &dk.s.dot(&ct.u).expect("matching rank");
    let m = decode_message(&dk.params, &w);
    kdf(&m, ct)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_parameter_set() {
        let p = KemParams::default();
        assert_eq!((p.ring().n(), p.ring().q(), p.rank(), p.eta1, p.eta2), (256, 3329, 3, 2, 2));
        assert_eq!(p.encaps_key_bytes(), 32 + 3 * 512);
        assert_eq!(p.ciphertext_bytes(), 4 * 512);
    }

    #[test]
    fn invalid_params() {
        let ring = RingParams::new(256, 3329).unwrap();
        assert!(matches!(KemParams::new(ring, 0, 2, 2), Err(KemError::ZeroRank)));
        assert!(matches!(KemParams::new(ring, 3, 0, 2), Err(KemError::Eta(0))));
        let small = RingParams::new(128, 3329).unwrap();
        assert!(matches!(KemParams::new(small, 3, 2, 2), Err(KemError::DegreeTooSmall(128))));
    }

    #[test]
    fn public_key_satisfies_defining_equation() {
        let p = KemParams::default();
        let (pair, e) = keygen_with_noise(&p, &mut Rng::from_u64(1));
        let t = mat_vec(&p, &pair.ek.seed_a, &pair.dk.s, false).try_add(&e).unwrap();
        assert_eq!(t, pair.ek.t);
        for s in pair.dk.s.elems() {
            assert!(s.inf_norm() <= 2);
        }
    }

    #[test]
    fn keygen_is_deterministic() {
        let p = KemParams::default();
        let a = kem_keygen(&p, &mut Rng::from_u64(9));
        let b = kem_keygen(&p, &mut Rng::from_u64(9));
        assert_eq!(a.ek.to_bytes(), b.ek.to_bytes());
        assert_eq!(a.dk.s, b.dk.s);
        let ek = EncapsKey::from_bytes(p, &a.ek.to_bytes()).unwrap();
        assert_eq!(ek, a.ek);
    }

    #[test]
    fn encaps_is_deterministic_and_fresh() {
        let p = KemParams::default();
        let pair = kem_keygen(&p, &mut Rng::from_u64(2));
        let (c1, k1) = kem_encaps(&pair.ek, &mut Rng::from_u64(3));
        let (c2, k2) = kem_encaps(&pair.ek, &mut Rng::from_u64(3));
        assert_eq!((c1.to_bytes(), k1.as_bytes()), (c2.to_bytes(), k2.as_bytes()));
        let mut rng = Rng::from_u64(4);
        let (c3, _) = kem_encaps(&pair.ek, &mut rng);
        let (c4, _) = kem_encaps(&pair.ek, &mut rng);
        assert_ne!(c3, c4);
        assert_eq!(k1.as_bytes().len() * 8, 256);
    }

    #[test]
    fn roundtrip_small_batch() {
        let p = KemParams::default();
        let mut rng = Rng::from_u64(10);
        for _ in 0..50 {
            let pair = kem_keygen(&p, &mut rng);
            let (ct, k) = kem_encaps(&pair.ek, &mut rng);
            let wire = KemCiphertext::from_bytes(&p, &ct.to_bytes()).unwrap();
            assert_eq!(kem_decaps(&pair.dk, &wire), k);
        }
    }

    #[test]
    fn decaps_is_total() {
        let p = KemParams::default();
        let pair = kem_keygen(&p, &mut Rng::from_u64(5));
        let a = kem_decaps(&pair.dk, &KemCiphertext::zero(&p));
        let b = kem_decaps(&pair.dk, &KemCiphertext::zero(&p));
        assert_eq!(a, b);
    }

    #[test]
    fn message_codec_roundtrip() {
        let p = KemParams::default();
        let mut m = [0u8; 32];
        for (i, b) in m.iter_mut().enumerate() {
            *b = (i as u8).wrapping_mul(37) ^ 0xa5;
        }
        assert_eq!(decode_message(&p, &encode_message(&p, &m)), m);
    }
}
