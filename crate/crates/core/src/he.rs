//! BFV additive homomorphic encryption over `R_q = Z_q[X]/(X^n + 1)`.
//!
//! Only what aggregation needs is here: key generation, encryption,
//! ciphertext addition, decryption, and the fixed-point codec that turns
//! real-valued gradients into plaintexts mod `t`.
//!
//! Plaintexts are scaled by `round(q * m / t)` rather than `floor(q / t) * m`.
//! The two differ by `round((q mod t) * m / t)`; for the default modulus
//! `q mod t = 65531`, so the plain `Delta * m` form would inject an error of
//! nearly `Delta` whenever a sum wraps mod `t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{
    sample_gaussian_ring, sample_ternary, sample_uniform, RingElement, RingError, RingParams, Rng,
};

#[derive(Debug, Error, PartialEq)]
pub enum HeError {
    #[error("plaintext modulus {t} must satisfy 2 <= t < q = {q}")]
    PlaintextModulus { t: u64, q: u64 },
    #[error("error deviation must be positive, got {0}")]
    Sigma(f64),
    #[error("plaintext value {value} at {index} is not below t = {t}")]
    PlaintextRange { index: usize, value: u64, t: u64 },
    #[error("block holds {len} values but the ring has {n} slots")]
    BlockTooLong { len: usize, n: usize },
    #[error("{adds} accumulated ciphertexts exceed the noise budget")]
    NoiseBudget { adds: usize },
    #[error("quantization overflow: |{value}| * {scale} does not fit below t/2")]
    QuantizationOverflow { value: f64, scale: f64 },
    #[error("quantization scale must be positive and finite, got {0}")]
    Scale(f64),
    #[error("contributor count must be at least 1")]
    NoContributors,
    #[error(transparent)]
    Ring(#[from] RingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfvParams {
    ring: RingParams,
    t: u64,
    sigma: f64,
}

impl Default for BfvParams {
    /// n = 512, q = 2^32 - 5, t = 2^16, sigma = 3.2.
    fn default() -> Self {
        Self {
            ring: RingParams::new(512, (1u64 << 32) - 5).expect("static parameters"),
            t: 1 << 16,
            sigma: 3.2,
        }
    }
}

impl BfvParams {
    pub fn new(ring: RingParams, t: u64, sigma: f64) -> Result<Self, HeError> {
        if t < 2 || t >= ring.q() {
            return Err(HeError::PlaintextModulus { t, q: ring.q() });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(HeError::Sigma(sigma));
        }
        Ok(Self { ring, t, sigma })
    }

    pub fn ring(&self) -> RingParams {
        self.ring
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `floor(q / t)`.
    pub fn delta(&self) -> u64 {
        self.ring.q() / self.t
    }

    pub fn ciphertext_bytes(&self) -> usize {
        2 * self.ring.element_bytes()
    }

    fn scale_plaintext(&self, m: u64) -> u64 {
        let (q, t) = (self.ring.q() as u128, self.t as u128);
        (((q * m as u128) + t / 2) / t % q) as u64
    }
}

/// True iff `adds * (2 sigma + 1) * n < q / (2t)`.
///
/// # Panics
/// If `adds == 0`.
pub fn check_noise_budget(adds: usize, params: &BfvParams) -> bool {
    assert!(adds >= 1, "noise budget is defined for at least one ciphertext");
    noise_bound(adds, params) < params.ring.q() as f64 / (2.0 * params.t as f64)
}

/// Left-hand side of the budget inequality.
pub fn noise_bound(adds: usize, params: &BfvParams) -> f64 {
    adds as f64 * (2.0 * params.sigma + 1.0) * params.ring.n() as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BfvPublicKey {
    pub p0: RingElement,
    pub p1: RingElement,
}

#[derive(Clone)]
pub struct BfvSecretKey {
    s: RingElement,
}

impl std::fmt::Debug for BfvSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BfvSecretKey(..)")
    }
}

impl BfvSecretKey {
    pub fn secret(&self) -> &RingElement {
        &self.s
    }
}

#[derive(Debug, Clone)]
pub struct BfvKeyPair {
    pub pk: BfvPublicKey,
    pub sk: BfvSecretKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeCiphertext {
    pub c0: RingElement,
    pub c1: RingElement,
    adds: usize,
}

impl HeCiphertext {
    /// Number of fresh encryptions folded into this ciphertext.
    pub fn adds(&self) -> usize {
        self.adds
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.c0.to_bytes();
        self.c1.write_bytes(&mut out);
        out
    }

    /// Decodes `c0 || c1`; wire ciphertexts are always fresh.
    pub fn from_bytes(params: &BfvParams, bytes: &[u8]) -> Result<Self, HeError> {
        let eb = params.ring.element_bytes();
        if bytes.len() != 2 * eb {
            return Err(RingError::Length { expected: 2 * eb, got: bytes.len() }.into());
        }
        Ok(Self {
            c0: RingElement::from_bytes(params.ring, &bytes[..eb])?,
            c1: RingElement::from_bytes(params.ring, &bytes[eb..])?,
            adds: 1,
        })
    }
}

/// Up to `n` plaintext slots in `[0, t)` plus the fixed-point scale they carry.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub values: Vec<u64>,
    pub scale: f64,
}

fn keygen_with_noise(params: &BfvParams, rng: &mut Rng) -> (BfvKeyPair, RingElement) {
    let s = sample_ternary(params.ring, rng);
    let a = sample_uniform(params.ring, rng);
    let e = sample_gaussian_ring(params.ring, params.sigma, rng);
    let p0 = -&(&(&a * &s) + &e);
    (BfvKeyPair { pk: BfvPublicKey { p0, p1: a }, sk: BfvSecretKey { s } }, e)
}

/// `s <- ternary`, `a <- U(R_q)`, `e <- D_sigma`; `pk = (-(a s + e), a)`.
pub fn bfv_keygen(params: &BfvParams, rng: &mut Rng) -> BfvKeyPair {
    keygen_with_noise(params, rng).0
}

pub fn bfv_encrypt(
    pk: &BfvPublicKey,
    m: &QuantizedBlock,
    params: &BfvParams,
    rng: &mut Rng,
) -> Result<HeCiphertext, HeError> {
    let n = params.ring.n();
    if m.values.len() > n {
        return Err(HeError::BlockTooLong { len: m.values.len(), n });
    }
    if let Some((index, &value)) = m.values.iter().enumerate().find(|(_, &v)| v >= params.t) {
        return Err(HeError::PlaintextRange { index, value, t: params.t });
    }
    let mut scaled = vec![0u64; n];
    for (slot, &v) in scaled.iter_mut().zip(&m.values) {
        *slot = params.scale_plaintext(v);
    }
    let scaled = RingElement::from_coeffs(params.ring, scaled)?;
    let u = sample_ternary(params.ring, rng);
    let e0 = sample_gaussian_ring(params.ring, params.sigma, rng);
    let e1 = sample_gaussian_ring(params.ring, params.sigma, rng);
    let c0 = &(&(&pk.p0 * &u) + &e0) + &scaled;
    let c1 = &(&pk.p1 * &u) + &e1;
    Ok(HeCiphertext { c0, c1, adds: 1 })
}

/// Component-wise sum; refuses results whose addition count breaks the budget.
pub fn bfv_add(a: &HeCiphertext, b: &HeCiphertext, params: &BfvParams) -> Result<HeCiphertext, HeError> {
    let adds = a.adds + b.adds;
    let c0 = a.c0.try_add(&b.c0)?;
    let c1 = a.c1.try_add(&b.c1)?;
    if c0.params() != params.ring {
        return Err(RingError::ParamMismatch { left: c0.params(), right: params.ring }.into());
    }
    if !check_noise_budget(adds, params) {
        return Err(HeError::NoiseBudget { adds });
    }
    Ok(HeCiphertext { c0, c1, adds })
}

/// `round(t * (c0 + c1 s) / q) mod t` per coefficient; returns all `n` slots.
pub fn bfv_decrypt(sk: &BfvSecretKey, ct: &HeCiphertext, params: &BfvParams) -> QuantizedBlock {
    let x = &ct.c0 + &(&ct.c1 * &sk.s);
    let (q, t) = (params.ring.q() as u128, params.t as u128);
    let values = x
        .coeffs()
        .iter()
        .map(|&c| (((t * c as u128) + q / 2) / q % t) as u64)
        .collect();
    QuantizedBlock { values, scale: 1.0 }
}

/// Centered fixed-point encoding `round(x * scale) mod t`, chunked into
/// blocks of at most `n` values.
pub fn quantize_gradient(x: &[f64], scale: f64, params: &BfvParams) -> Result<Vec<QuantizedBlock>, HeError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(HeError::Scale(scale));
    }
    let t = params.t as i64;
    let half = params.t as f64 / 2.0;
    x.chunks(params.ring.n())
        .map(|chunk| {
            let values = chunk
                .iter()
                .map(|&v| {
                    let r = (v * scale).round();
                    if r.is_nan() || r.abs() >= half {
                        return Err(HeError::QuantizationOverflow { value: v, scale });
                    }
                    Ok((r as i64).rem_euclid(t) as u64)
                })
                .collect::<Result<_, _>>()?;
            Ok(QuantizedBlock { values, scale })
        })
        .collect()
}

/// Centered lift of summed blocks, divided by `scale * contributors`.
pub fn dequantize_sum(
    blocks: &[QuantizedBlock],
    scale: f64,
    contributors: usize,
    params: &BfvParams,
) -> Result<Vec<f64>, HeError> {
    if contributors == 0 {
        return Err(HeError::NoContributors);
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(HeError::Scale(scale));
    }
    let t = params.t;
    let denom = scale * contributors as f64;
    Ok(blocks
        .iter()
        .flat_map(|b| b.values.iter())
        .map(|&v| {
            let c = if v < t.div_ceil(2) { v as i64 } else { v as i64 - t as i64 };
            c as f64 / denom
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::Rng;
    use proptest::prelude::*;

    fn random_block(params: &BfvParams, rng: &mut Rng) -> QuantizedBlock {
        let values = (0..params.ring.n()).map(|_| rng.below(params.t)).collect();
        QuantizedBlock { values, scale: 1.0 }
    }

    #[test]
    fn default_parameters() {
        let p = BfvParams::default();
        assert_eq!(p.ring().n(), 512);
        assert_eq!(p.ring().q(), 4_294_967_291);
        assert_eq!(p.t(), 65_536);
        assert_eq!(p.delta(), 65_535);
        assert!(BfvParams::new(p.ring(), p.ring().q(), 3.2).is_err());
        assert!(BfvParams::new(p.ring(), 2, 0.0).is_err());
    }

    #[test]
    fn budget_values() {
        let p = BfvParams::default();
        assert!((noise_bound(5, &p) - 18_944.0).abs() < 1e-9);
        assert!(check_noise_budget(5, &p));
        assert!((noise_bound(8, &p) - 30_310.4).abs() < 1e-9);
        assert!(check_noise_budget(8, &p));
        assert!((noise_bound(9, &p) - 34_099.2).abs() < 1e-9);
        assert!(!check_noise_budget(9, &p));
    }

    #[test]
    #[should_panic]
    fn budget_rejects_zero() {
        check_noise_budget(0, &BfvParams::default());
    }

    proptest! {
        #[test]
        fn budget_monotonicity(n_adds in 1usize..20, sigma in 0.5f64..8.0, logn in 4u32..11, logq in 33u32..47) {
            let t = 1u64 << 16;
            let mk = |n: usize, q: u64, s: f64| BfvParams::new(RingParams::new(n, q).unwrap(), t, s).unwrap();
            let n = 1usize << logn;
            let q = (1u64 << logq) - 1;
            let base = mk(n, q, sigma);
            let ok = check_noise_budget(n_adds, &base);
            // a larger N, sigma or n can only turn true into false; a larger q only false into true
            if !ok {
                prop_assert!(!check_noise_budget(n_adds + 1, &base));
                prop_assert!(!check_noise_budget(n_adds, &mk(n, q, sigma * 1.5)));
                prop_assert!(!check_noise_budget(n_adds, &mk(n * 2, q, sigma)));
            } else {
                prop_assert!(check_noise_budget(n_adds, &mk(n, q * 2, sigma)));
            }
        }
    }

    #[test]
    fn keygen_defining_equation() {
        let p = BfvParams::default();
        let (pair, e) = keygen_with_noise(&p, &mut Rng::from_u64(1));
        let lhs = &pair.pk.p0 + &(&pair.pk.p1 * &pair.sk.s);
        assert_eq!(lhs, -&e);
        assert!(lhs.inf_norm() as f64 <= 10.0 * p.sigma());
        let again = bfv_keygen(&p, &mut Rng::from_u64(1));
        assert_eq!(again.pk, pair.pk);
    }

    #[test]
    fn zero_and_random_roundtrip() {
        let p = BfvParams::default();
        let mut rng = Rng::from_u64(2);
        let pair = bfv_keygen(&p, &mut rng);
        let zero = QuantizedBlock { values: vec![0; 512], scale: 1.0 };
        let ct = bfv_encrypt(&pair.pk, &zero, &p, &mut rng).unwrap();
        assert!(bfv_decrypt(&pair.sk, &ct, &p).values.iter().all(|&v| v == 0));
        for _ in 0..100 {
            let m = random_block(&p, &mut rng);
            let ct = bfv_encrypt(&pair.pk, &m, &p, &mut rng).unwrap();
            assert_eq!(bfv_decrypt(&pair.sk, &ct, &p).values, m.values);
        }
    }

    #[test]
    fn encryptions_are_randomised() {
        let p = BfvParams::default();
        let mut rng = Rng::from_u64(3);
        let pair = bfv_keygen(&p, &mut rng);
        let m = random_block(&p, &mut rng);
        let a = bfv_encrypt(&pair.pk, &m, &p, &mut rng).unwrap();
        let b = bfv_encrypt(&pair.pk, &m, &p, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn pairwise_sums_match_plaintext_oracle() {
        let p = BfvParams::default();
        let mut rng = Rng::from_u64(4);
        let pair = bfv_keygen(&p, &mut rng);
        let zero = QuantizedBlock { values: vec![], scale: 1.0 };
        for _ in 0..100 {
            let (m1, m2) = (random_block(&p, &mut rng), random_block(&p, &mut rng));
            let c1 = bfv_encrypt(&pair.pk, &m1, &p, &mut rng).unwrap();
            let c2 = bfv_encrypt(&pair.pk, &m2, &p, &mut rng).unwrap();
            let sum = bfv_add(&c1, &c2, &p).unwrap();
            assert_eq!(sum.adds(), 2);
            let expect: Vec<u64> = m1.values.iter().zip(&m2.values).map(|(a, b)| (a + b) % p.t()).collect();
            assert_eq!(bfv_decrypt(&pair.sk, &sum, &p).values, expect);
        }
        let m = random_block(&p, &mut rng);
        let c = bfv_encrypt(&pair.pk, &m, &p, &mut rng).unwrap();
        let cz = bfv_encrypt(&pair.pk, &zero, &p, &mut rng).unwrap();
        assert_eq!(bfv_decrypt(&pair.sk, &bfv_add(&c, &cz, &p).unwrap(), &p).values, m.values);
    }

    #[test]
    fn five_way_sum_and_budget_enforcement() {
        let p = BfvParams::default();
        let mut rng = Rng::from_u64(5);
        let pair = bfv_keygen(&p, &mut rng);
        let blocks: Vec<_> = (0..9).map(|_| random_block(&p, &mut rng)).collect();
        let cts: Vec<_> = blocks.iter().map(|b| bfv_encrypt(&pair.pk, b, &p, &mut rng).unwrap()).collect();
        let mut acc = cts[0].clone();
        for c in &cts[1..5] {
            acc = bfv_add(&acc, c, &p).unwrap();
        }
        let expect: Vec<u64> = (0..512)
            .map(|i| blocks[..5].iter().map(|b| b.values[i]).sum::<u64>() % p.t())
            .collect();
        assert_eq!(bfv_decrypt(&pair.sk, &acc, &p).values, expect);
        for c in &cts[5..8] {
            acc = bfv_add(&acc, c, &p).unwrap();
        }
        assert_eq!(acc.adds(), 8);
        assert_eq!(bfv_add(&acc, &cts[8], &p), Err(HeError::NoiseBudget { adds: 9 }));
    }

    #[test]
    fn plaintext_range_and_length_checked() {
        let p = BfvParams::default();
        let mut rng = Rng::from_u64(6);
        let pair = bfv_keygen(&p, &mut rng);
        let bad = QuantizedBlock { values: vec![p.t()], scale: 1.0 };
        assert!(matches!(bfv_encrypt(&pair.pk, &bad, &p, &mut rng), Err(HeError::PlaintextRange { .. })));
        let long = QuantizedBlock { values: vec![0; 513], scale: 1.0 };
        assert!(matches!(bfv_encrypt(&pair.pk, &long, &p, &mut rng), Err(HeError::BlockTooLong { .. })));
    }

    #[test]
    fn zero_ciphertext_decrypts_to_zero() {
        let p = BfvParams::default();
        let pair = bfv_keygen(&p, &mut Rng::from_u64(7));
        let ct = HeCiphertext { c0: RingElement::zero(p.ring()), c1: RingElement::zero(p.ring()), adds: 1 };
        assert!(bfv_decrypt(&pair.sk, &ct, &p).values.iter().all(|&v| v == 0));
    }

    #[test]
    fn ciphertext_wire_roundtrip() {
        let p = BfvParams::default();
        let mut rng = Rng::from_u64(8);
        let pair = bfv_keygen(&p, &mut rng);
        let ct = bfv_encrypt(&pair.pk, &random_block(&p, &mut rng), &p, &mut rng).unwrap();
        let bytes = ct.to_bytes();
        assert_eq!(bytes.len(), p.ciphertext_bytes());
        assert_eq!(HeCiphertext::from_bytes(&p, &bytes).unwrap(), ct);
    }

    #[test]
    fn quantize_zero_and_overflow() {
        let p = BfvParams::default();
        let blocks = quantize_gradient(&vec![0.0; 1100], 256.0, &p).unwrap();
        assert_eq!(blocks.iter().map(|b| b.values.len()).collect::<Vec<_>>(), vec![512, 512, 76]);
        assert!(blocks.iter().all(|b| b.values.iter().all(|&v| v == 0)));
        assert!(matches!(
            quantize_gradient(&[128.0], 256.0, &p),
            Err(HeError::QuantizationOverflow { .. })
        ));
        assert!(quantize_gradient(&[127.99], 256.0, &p).is_ok());
        assert!(matches!(dequantize_sum(&blocks, 256.0, 0, &p), Err(HeError::NoContributors)));
    }

    proptest! {
        #[test]
        fn quantization_error_bounded(x in proptest::collection::vec(-100.0f64..100.0, 1..700)) {
            let p = BfvParams::default();
            let scale = 256.0;
            let blocks = quantize_gradient(&x, scale, &p).unwrap();
            let back = dequantize_sum(&blocks, scale, 1, &p).unwrap();
            prop_assert_eq!(back.len(), x.len());
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 0.5 / scale + 1e-12);
            }
        }
    }

    #[test]
    fn encrypted_average_of_five_clients() {
        // plaintext averaging oracle vs the full quantize -> encrypt -> add -> decrypt path
        let p = BfvParams::default();
        let scale = 256.0;
        let mut rng = Rng::from_u64(9);
        let pair = bfv_keygen(&p, &mut rng);
        let clients: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..512).map(|_| (rng.unit_open0() - 0.5) * 20.0).collect())
            .collect();
        let mut acc: Option<HeCiphertext> = None;
        for x in &clients {
            let block = &quantize_gradient(x, scale, &p).unwrap()[0];
            let ct = bfv_encrypt(&pair.pk, block, &p, &mut rng).unwrap();
            acc = Some(match acc {
                None => ct,
                Some(a) => bfv_add(&a, &ct, &p).unwrap(),
            });
        }
        let dec = bfv_decrypt(&pair.sk, &acc.unwrap(), &p);
        let avg = dequantize_sum(&[dec], scale, 5, &p).unwrap();
        for i in 0..512 {
            let truth = clients.iter().map(|c| c[i]).sum::<f64>() / 5.0;
            assert!((avg[i] - truth).abs() <= 2.0 / scale);
            assert!((avg[i] - truth).abs() <= 0.5 / scale + 1e-12);
        }
        // identical inputs average back to themselves
        let same = vec![clients[0].clone(); 5];
        let sum: Vec<u64> = (0..512)
            .map(|i| {
                same.iter()
                    .map(|c| quantize_gradient(&c[i..i + 1], scale, &p).unwrap()[0].values[0])
                    .sum::<u64>()
                    % p.t()
            })
            .collect();
        let back = dequantize_sum(&[QuantizedBlock { values: sum, scale }], scale, 5, &p).unwrap();
        for (a, b) in back.iter().zip(&clients[0]) {
            assert!((a - b).abs() <= 0.5 / scale);
        }
    }
}
