//! Non-interactive lattice proof that a quantized update has bounded l2 norm.
//!
//! Commitments are `A * (x || r) mod q` for an unstructured `m x (d + ell)`
//! matrix `A` that is never stored: each row is re-expanded from the key seed
//! whenever a product is needed. The prover masks `w` with `y ~ D_{sigma_y}`,
//! derives the challenge by hashing `(C, T, tau)`, and releases
//! `z = y + c w` after rejection sampling.
//!
//! Challenges `c < min_challenge` are treated as degenerate. At `c = 1` a
//! scale-50 Byzantine update still lands inside the norm bound, so the prover
//! restarts on them and the verifier's challenge check refuses them.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha3::{Digest, Sha3_256};
use thiserror::Error;

use crate::ring::{sample_gaussian_vec, Rng};

const FS_TAG: &[u8] = b"zkfl/zkp/fiat-shamir/v1";
const MATRIX_TAG: &[u8] = b"zkfl/zkp/matrix/v1";

#[derive(Debug, Error, PartialEq)]
pub enum ZkpError {
    #[error("invalid parameters: {0}")]
    Params(&'static str),
    #[error("{what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("quantized norm {norm:.1} exceeds threshold {bound:.1}; refusing to prove a false statement")]
    NormExceedsThreshold { norm: f64, bound: f64 },
    #[error("rejection sampling did not accept within {0} attempts")]
    RestartLimit(u32),
    #[error("response coordinate {0} does not fit in 32 bits")]
    ResponseOverflow(i64),
    #[error("non-finite gradient entry at {0}")]
    NonFinite(usize),
    #[error("truncated proof encoding")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZkpParams {
    pub d: usize,
    pub ell: usize,
    pub m: usize,
    pub q: u16,
    pub sigma_r: f64,
    pub beta: f64,
    pub kappa: u32,
    pub min_challenge: u32,
    pub tau: f64,
    /// Fixed-point scale of the quantized gradient; `sigma_y = beta * tau * scale`.
    pub scale: f64,
    pub bound_factor: f64,
    pub restart_limit: u32,
}

impl ZkpParams {
    /// Defaults for a `d`-dimensional gradient.
    pub fn new(d: usize) -> Self {
        Self {
            d,
            ell: 128,
            m: 256,
            q: 7681,
            sigma_r: 1024.0,
            beta: 12.0,
            kappa: 4,
            min_challenge: 2,
            tau: 5.0,
            scale: 1024.0,
            bound_factor: 1.5,
            restart_limit: 64,
        }
    }

    pub fn validate(&self) -> Result<(), ZkpError> {
        if self.d == 0 || self.ell == 0 || self.m == 0 {
            return Err(ZkpError::Params("dimensions must be positive"));
        }
        if self.q < 2 {
            return Err(ZkpError::Params("commitment modulus must be at least 2"));
        }
        if !(1..=32).contains(&self.kappa) {
            return Err(ZkpError::Params("kappa must be in 1..=32"));
        }
        if u64::from(self.min_challenge) >= 1u64 << self.kappa {
            return Err(ZkpError::Params("min_challenge leaves no admissible challenge"));
        }
        for v in [self.sigma_r, self.beta, self.tau, self.scale, self.bound_factor] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ZkpError::Params("real parameters must be positive and finite"));
            }
        }
        if self.restart_limit == 0 {
            return Err(ZkpError::Params("restart limit must be positive"));
        }
        Ok(())
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn sigma_y(&self) -> f64 {
        self.beta * self.tau * self.scale
    }

    /// Verifier bound `B = bound_factor * sigma_y * sqrt(d)`.
    pub fn norm_bound(&self) -> f64 {
        self.bound_factor * self.sigma_y() * (self.d as f64).sqrt()
    }

    /// Rejection constant `M = exp(12 / beta + 1 / (2 beta^2))`.
    pub fn rejection_constant(&self) -> f64 {
        (12.0 / self.beta + 1.0 / (2.0 * self.beta * self.beta)).exp()
    }

    pub fn proof_bytes(&self) -> usize {
        2 * self.m * 2 + 4 + self.d * 4 + self.ell * 2
    }
}

/// Seed from which the commitment matrix is expanded row by row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentKey {
    seed: [u8; 32],
}

impl CommitmentKey {
    pub fn new(seed: [u8; 32]) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    /// Row `i` of `A`, entries uniform in `[0, q)` by rejection on 16-bit lanes.
    pub fn row(&self, i: usize, cols: usize, q: u16) -> Vec<u16> {
        let mut out = Vec::with_capacity(cols);
        self.fill_row(i, cols, q, &mut out);
        out
    }

    fn fill_row(&self, i: usize, cols: usize, q: u16, out: &mut Vec<u16>) {
        out.clear();
        let mask = (q as u32).next_power_of_two() as u64 - 1;
        let mut rng = Rng::derive(&self.seed, MATRIX_TAG, &[i as u64]);
        while out.len() < cols {
            let w = rng.next_u64();
            for lane in 0..4 {
                let v = ((w >> (16 * lane)) & mask) as u16;
                if v < q && out.len() < cols {
                    out.push(v);
                }
            }
        }
    }

    /// `A * x mod q` for `x` already reduced into `[0, q)`.
    fn apply(&self, x: &[u32], rows: usize, q: u16) -> Vec<u16> {
        (0..rows)
            .into_par_iter()
            .map_init(Vec::new, |buf, i| {
                self.fill_row(i, x.len(), q, buf);
                let acc: u64 = buf.iter().zip(x).map(|(&a, &b)| a as u64 * b as u64).sum();
                (acc % q as u64) as u16
            })
            .collect()
    }
}

fn reduce_into(q: u16, parts: &[&[i64]]) -> Vec<u32> {
    let q = q as i64;
    parts
        .iter()
        .flat_map(|p| p.iter())
        .map(|&v| v.rem_euclid(q) as u32)
        .collect()
}

/// `A * (x || r) mod q`.
pub fn commit(key: &CommitmentKey, x: &[i64], r: &[i64], params: &ZkpParams) -> Result<Vec<u16>, ZkpError> {
    check_len("x", params.d, x.len())?;
    check_len("r", params.ell, r.len())?;
    Ok(key.apply(&reduce_into(params.q, &[x, r]), params.m, params.q))
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ZkpError> {
    if expected != got {
        return Err(ZkpError::Dimension { what, expected, got });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGradient {
    pub w_tilde: Vec<i64>,
    pub scale: f64,
}

impl QuantizedGradient {
    /// `round(delta * scale)` component-wise.
    pub fn quantize(delta: &[f64], scale: f64) -> Result<Self, ZkpError> {
        let w_tilde = delta
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let r = (v * scale).round();
                if !r.is_finite() || r.abs() > i64::MAX as f64 / 4.0 {
                    return Err(ZkpError::NonFinite(i));
                }
                Ok(r as i64)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { w_tilde, scale })
    }

    pub fn norm(&self) -> f64 {
        sq_norm(&self.w_tilde).sqrt()
    }
}

fn sq_norm(v: &[i64]) -> f64 {
    v.iter().map(|&x| (x as i128 * x as i128) as f64).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormProof {
    pub commitment: Vec<u16>,
    pub mask_commitment: Vec<u16>,
    pub challenge: u32,
    pub z: Vec<i32>,
    pub r_z: Vec<u16>,
}

impl NormProof {
    /// `C || T || c || z || r_z`, little-endian: u16, u16, u32, i32, u16.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            2 * (self.commitment.len() + self.mask_commitment.len() + self.r_z.len()) + 4 + 4 * self.z.len(),
        );
        for v in self.commitment.iter().chain(&self.mask_commitment) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.challenge.to_le_bytes());
        for v in &self.z {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.r_z {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(params: &ZkpParams, bytes: &[u8]) -> Result<Self, ZkpError> {
        if bytes.len() != params.proof_bytes() {
            return Err(ZkpError::Truncated);
        }
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &bytes[pos..pos + n];
            pos += n;
            s
        };
        let u16s = |s: &[u8]| s.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect::<Vec<_>>();
        let commitment = u16s(take(2 * params.m));
        let mask_commitment = u16s(take(2 * params.m));
        let challenge = u32::from_le_bytes(take(4).try_into().expect("4 bytes"));
        let z = take(4 * params.d)
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let r_z = u16s(take(2 * params.ell));
        Ok(Self { commitment, mask_commitment, challenge, z, r_z })
    }
}

fn u16_bytes(v: &[u16]) -> impl Iterator<Item = [u8; 2]> + '_ {
    v.iter().map(|x| x.to_le_bytes())
}

/// `SHA3-256(tag || C || T || tau) mod 2^kappa`; `tau` enters as its IEEE-754 bits.
pub fn fiat_shamir_challenge(c: &[u16], t: &[u16], tau: f64, params: &ZkpParams) -> u32 {
    let mut h = Sha3_256::new();
    h.update(FS_TAG);
    h.update((c.len() as u64).to_le_bytes());
    for b in u16_bytes(c) {
        h.update(b);
    }
    h.update((t.len() as u64).to_le_bytes());
    for b in u16_bytes(t) {
        h.update(b);
    }
    // +0.0 and -0.0 compare equal but differ in bits
    let tau = if tau == 0.0 { 0.0 } else { tau };
    h.update(tau.to_bits().to_le_bytes());
    let digest = h.finalize();
    let word = u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"));
    (word & ((1u64 << params.kappa) - 1)) as u32
}

/// Lyubashevsky acceptance with probability
/// `min(1, exp((-2<z, v> + |v|^2) / (2 sigma^2)) / M)` where `v = c * w`.
pub fn rejection_sample_accept(z: &[i64], c: u32, w_tilde: &[i64], sigma_y: f64, m_const: f64, rng: &mut Rng) -> bool {
    if c == 0 {
        return true;
    }
    let c = c as i128;
    let (mut zv, mut vv) = (0i128, 0i128);
    for (&zi, &wi) in z.iter().zip(w_tilde) {
        let vi = c * wi as i128;
        zv += zi as i128 * vi;
        vv += vi * vi;
    }
    let log_ratio = (vv as f64 - 2.0 * zv as f64) / (2.0 * sigma_y * sigma_y) - m_const.ln();
    log_ratio >= 0.0 || rng.unit_open0().ln() < log_ratio
}

pub fn prove_norm(key: &CommitmentKey, grad: &QuantizedGradient, params: &ZkpParams, rng: &mut Rng) -> Result<NormProof, ZkpError> {
    prove_norm_counted(key, grad, params, rng).map(|(p, _)| p)
}

/// Like [`prove_norm`], also returning how many attempts were discarded.
pub fn prove_norm_counted(
    key: &CommitmentKey,
    grad: &QuantizedGradient,
    params: &ZkpParams,
    rng: &mut Rng,
) -> Result<(NormProof, u32), ZkpError> {
    params.validate()?;
    check_len("w_tilde", params.d, grad.w_tilde.len())?;
    let norm = grad.norm();
    let limit = params.tau * params.scale;
    if norm > limit {
        return Err(ZkpError::NormExceedsThreshold { norm, bound: limit });
    }
    let r = sample_gaussian_vec(params.ell, params.sigma_r, rng);
    let commitment = commit(key, &grad.w_tilde, &r, params)?;
    let sigma_y = params.sigma_y();
    let bound_sq = params.norm_bound().powi(2);
    let m_const = params.rejection_constant();
    for attempt in 0..params.restart_limit {
        let y = sample_gaussian_vec(params.d, sigma_y, rng);
        let r_prime = sample_gaussian_vec(params.ell, params.sigma_r, rng);
        let mask_commitment = commit(key, &y, &r_prime, params)?;
        let c = fiat_shamir_challenge(&commitment, &mask_commitment, params.tau, params);
        if c < params.min_challenge {
            continue;
        }
        let z: Vec<i64> = y.iter().zip(&grad.w_tilde).map(|(&yi, &wi)| yi + c as i64 * wi).collect();
        if !rejection_sample_accept(&z, c, &grad.w_tilde, sigma_y, m_const, rng) || sq_norm(&z) > bound_sq {
            continue;
        }
        let proof = finish(commitment, mask_commitment, c, &z, &r_prime, &r, params)?;
        return Ok((proof, attempt));
    }
    Err(ZkpError::RestartLimit(params.restart_limit))
}

fn finish(
    commitment: Vec<u16>,
    mask_commitment: Vec<u16>,
    c: u32,
    z: &[i64],
    r_prime: &[i64],
    r: &[i64],
    params: &ZkpParams,
) -> Result<NormProof, ZkpError> {
    let z = z
        .iter()
        .map(|&v| i32::try_from(v).map_err(|_| ZkpError::ResponseOverflow(v)))
        .collect::<Result<_, _>>()?;
    let q = params.q as i64;
    let r_z = r_prime
        .iter()
        .zip(r)
        .map(|(&a, &b)| (a + c as i64 * b).rem_euclid(q) as u16)
        .collect();
    Ok(NormProof { commitment, mask_commitment, challenge: c, z, r_z })
}

/// One honest-looking transcript over any gradient, with no norm refusal and
/// no rejection sampling: what a prover holding an out-of-bound update can
/// still produce.
pub fn transcript_without_abort(
    key: &CommitmentKey,
    grad: &QuantizedGradient,
    params: &ZkpParams,
    rng: &mut Rng,
) -> Result<NormProof, ZkpError> {
    params.validate()?;
    check_len("w_tilde", params.d, grad.w_tilde.len())?;
    let r = sample_gaussian_vec(params.ell, params.sigma_r, rng);
    let commitment = commit(key, &grad.w_tilde, &r, params)?;
    loop {
        let y = sample_gaussian_vec(params.d, params.sigma_y(), rng);
        let r_prime = sample_gaussian_vec(params.ell, params.sigma_r, rng);
        let mask_commitment = commit(key, &y, &r_prime, params)?;
        let c = fiat_shamir_challenge(&commitment, &mask_commitment, params.tau, params);
        if c < params.min_challenge {
            continue;
        }
        let z: Vec<i64> = y.iter().zip(&grad.w_tilde).map(|(&yi, &wi)| yi + c as i64 * wi).collect();
        return finish(commitment, mask_commitment, c, &z, &r_prime, &r, params);
    }
}

/// Well-formed but unrelated transcript: random commitments and challenge,
/// `z ~ D_{sigma_y}` so the norm check alone would pass.
pub fn garbage_transcript(params: &ZkpParams, rng: &mut Rng) -> NormProof {
    let q = params.q as u64;
    let uniform = |rng: &mut Rng, n: usize| (0..n).map(|_| rng.below(q) as u16).collect::<Vec<_>>();
    let commitment = uniform(rng, params.m);
    let mask_commitment = uniform(rng, params.m);
    let challenge = rng.below(1u64 << params.kappa) as u32;
    let z = sample_gaussian_vec(params.d, params.sigma_y(), rng)
        .into_iter()
        .map(|v| v as i32)
        .collect();
    let r_z = uniform(rng, params.ell);
    NormProof { commitment, mask_commitment, challenge, z, r_z }
}

/// Consistent transcript for a challenge picked by the prover instead of the
/// hash; with `c = 0` it says nothing about `w_tilde` yet passes checks (a) and (c).
pub fn chosen_challenge_transcript(
    key: &CommitmentKey,
    grad: &QuantizedGradient,
    c: u32,
    params: &ZkpParams,
    rng: &mut Rng,
) -> Result<NormProof, ZkpError> {
    params.validate()?;
    check_len("w_tilde", params.d, grad.w_tilde.len())?;
    let r = sample_gaussian_vec(params.ell, params.sigma_r, rng);
    let commitment = commit(key, &grad.w_tilde, &r, params)?;
    let y = sample_gaussian_vec(params.d, params.sigma_y(), rng);
    let r_prime = sample_gaussian_vec(params.ell, params.sigma_r, rng);
    let mask_commitment = commit(key, &y, &r_prime, params)?;
    let z: Vec<i64> = y.iter().zip(&grad.w_tilde).map(|(&yi, &wi)| yi + c as i64 * wi).collect();
    finish(commitment, mask_commitment, c, &z, &r_prime, &r, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    Malformed,
    /// check (a): `|z| > B`
    NormBound,
    /// check (b): challenge mismatch or degenerate
    Challenge,
    /// check (c): `A (z || r_z) != T + c C`
    Algebraic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(Rejection),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

/// Which verifier checks run; production code always uses [`Checks::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checks {
    pub norm: bool,
    pub challenge: bool,
    pub algebraic: bool,
}

impl Checks {
    pub const ALL: Self = Self { norm: true, challenge: true, algebraic: true };
}

pub fn verify_norm(key: &CommitmentKey, proof: &NormProof, tau: f64, params: &ZkpParams) -> Verdict {
    verify_norm_with(key, proof, tau, params, Checks::ALL)
}

pub fn verify_norm_with(key: &CommitmentKey, proof: &NormProof, tau: f64, params: &ZkpParams, checks: Checks) -> Verdict {
    let params = params.with_tau(tau);
    let q = params.q;
    let well_formed = params.validate().is_ok()
        && proof.commitment.len() == params.m
        && proof.mask_commitment.len() == params.m
        && proof.z.len() == params.d
        && proof.r_z.len() == params.ell
        && u64::from(proof.challenge) < 1u64 << params.kappa
        && proof.commitment.iter().chain(&proof.mask_commitment).chain(&proof.r_z).all(|&v| v < q);
    if !well_formed {
        return Verdict::Reject(Rejection::Malformed);
    }
    if checks.norm {
        let sq: f64 = proof.z.iter().map(|&v| (v as i64 * v as i64) as f64).sum();
        if sq > params.norm_bound().powi(2) {
            return Verdict::Reject(Rejection::NormBound);
        }
    }
    if checks.challenge {
        let expected = fiat_shamir_challenge(&proof.commitment, &proof.mask_commitment, tau, &params);
        if proof.challenge != expected || proof.challenge < params.min_challenge {
            return Verdict::Reject(Rejection::Challenge);
        }
    }
    if checks.algebraic {
        let qi = q as i64;
        let x: Vec<u32> = proof
            .z
            .iter()
            .map(|&v| (v as i64).rem_euclid(qi) as u32)
            .chain(proof.r_z.iter().map(|&v| v as u32))
            .collect();
        let lhs = key.apply(&x, params.m, q);
        let c = proof.challenge as u64 % q as u64;
        let consistent = lhs
            .iter()
            .zip(proof.mask_commitment.iter().zip(&proof.commitment))
            .all(|(&l, (&t, &cm))| l as u64 == (t as u64 + c * cm as u64) % q as u64);
        if !consistent {
            return Verdict::Reject(Rejection::Algebraic);
        }
    }
    Verdict::Accept
}
