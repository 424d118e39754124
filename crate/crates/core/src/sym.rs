//! AES-256-GCM wrapping of client payloads under the KEM session key.
//!
//! Wire framing is `nonce (12) || body || tag (16)`. A decapsulation mismatch
//! on the server shows up here as [`SymError::Authentication`].

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::RngCore;
use thiserror::Error;

use crate::kem::SessionKey;
use crate::ring::Rng;

pub const NONCE_BYTES: usize = 12;
pub const TAG_BYTES: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SymError {
    #[error("authentication failed")]
    Authentication,
    #[error("sealed payload shorter than nonce and tag ({0} bytes)")]
    Truncated(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedPayload {
    pub nonce: [u8; NONCE_BYTES],
    pub body: Vec<u8>,
    pub tag: [u8; TAG_BYTES],
}

impl SealedPayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SymError> {
        if bytes.len() < NONCE_BYTES + TAG_BYTES {
            return Err(SymError::Truncated(bytes.len()));
        }
        let (nonce, rest) = bytes.split_at(NONCE_BYTES);
        let (body, tag) = rest.split_at(rest.len() - TAG_BYTES);
        Ok(Self {
            nonce: nonce.try_into().expect("split"),
            body: body.to_vec(),
            tag: tag.try_into().expect("split"),
        })
    }

    pub fn wire_len(&self) -> usize {
        NONCE_BYTES + self.body.len() + TAG_BYTES
    }
}

pub fn seal(key: &SessionKey, plaintext: &[u8], rng: &mut Rng) -> SealedPayload {
    let cipher = Aes256Gcm::new(key.as_bytes().into());
    let mut nonce = [0u8; NONCE_BYTES];
    rng.fill_bytes(&mut nonce);
    let mut out = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("AES-GCM encryption is infallible for in-memory buffers");
    let tag = out.split_off(out.len() - TAG_BYTES);
    SealedPayload { nonce, body: out, tag: tag.try_into().expect("16-byte tag") }
}

pub fn open(key: &SessionKey, sealed: &SealedPayload) -> Result<Vec<u8>, SymError> {
    let cipher = Aes256Gcm::new(key.as_bytes().into());
    let mut buf = Vec::with_capacity(sealed.body.len() + TAG_BYTES);
    buf.extend_from_slice(&sealed.body);
    buf.extend_from_slice(&sealed.tag);
    cipher
        .decrypt(Nonce::from_slice(&sealed.nonce), buf.as_slice())
        .map_err(|_| SymError::Authentication)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(b: u8) -> SessionKey {
        SessionKey::from_bytes([b; 32])
    }

    #[test]
    fn roundtrip_random_payloads() {
        let mut rng = Rng::from_u64(1);
        for len in [0usize, 1, 15, 16, 17, 1000] {
            let mut p = vec![0u8; len];
            rng.fill_bytes(&mut p);
            let sealed = seal(&key(7), &p, &mut rng);
            assert_eq!(sealed.wire_len(), len + NONCE_BYTES + TAG_BYTES);
            assert_eq!(open(&key(7), &sealed).unwrap(), p);
            let wire = SealedPayload::from_bytes(&sealed.to_bytes()).unwrap();
            assert_eq!(open(&key(7), &wire).unwrap(), p);
        }
    }

    #[test]
    fn fresh_nonce_per_seal() {
        let mut rng = Rng::from_u64(2);
        let a = seal(&key(1), b"same", &mut rng);
        let b = seal(&key(1), b"same", &mut rng);
        assert_ne!(a.nonce, b.nonce);
        assert_ne!(a.body, b.body);
    }

    #[test]
    fn wrong_key_fails() {
        let sealed = seal(&key(1), b"payload", &mut Rng::from_u64(3));
        assert_eq!(open(&key(2), &sealed), Err(SymError::Authentication));
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let sealed = seal(&key(9), b"short msg", &mut Rng::from_u64(4));
        let wire = sealed.to_bytes();
        for byte in 0..wire.len() {
            for bit in 0..8 {
                let mut w = wire.clone();
                w[byte] ^= 1 << bit;
                let tampered = SealedPayload::from_bytes(&w).unwrap();
                assert_eq!(open(&key(9), &tampered), Err(SymError::Authentication));
            }
        }
    }

    #[test]
    fn truncated_frame() {
        assert_eq!(SealedPayload::from_bytes(&[0u8; 27]), Err(SymError::Truncated(27)));
        assert!(SealedPayload::from_bytes(&[0u8; 28]).is_ok());
    }
}
