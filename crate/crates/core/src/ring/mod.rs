//! Arithmetic in the negacyclic ring `Z_q[X]/(X^n + 1)`.
//!
//! Every lattice layer in the crate (KEM, BFV, norm proofs' randomness) is
//! built on [`RingElement`]. Coefficients are stored in canonical form
//! `[0, q)`; [`RingElement::centered`] gives the `[-q/2, q/2)` view used for
//! norm computations.
//!
//! Multiplication is schoolbook `O(n^2)` with 128-bit accumulation, which is
//! what the overhead measurements in the harness are calibrated against.

mod rng;
mod sample;

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rng::Rng;
pub use sample::{
    sample_cbd, sample_gaussian_ring, sample_gaussian_vec, sample_ternary, sample_uniform,
    GAUSSIAN_TAIL_CUTOFF,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("ring degree {0} is not a power of two")]
    DegreeNotPowerOfTwo(usize),
    #[error("modulus {0} is below 2")]
    ModulusTooSmall(u64),
    #[error("n * (q-1)^2 overflows the 128-bit accumulator (n = {n}, q = {q})")]
    AccumulatorOverflow { n: usize, q: u64 },
    #[error("ring parameter mismatch: {left} vs {right}")]
    ParamMismatch { left: RingParams, right: RingParams },
    #[error("expected {expected} coefficients, got {got}")]
    Length { expected: usize, got: usize },
    #[error("coefficient {value} at index {index} is not reduced mod {q}")]
    Unreduced { index: usize, value: u64, q: u64 },
    #[error("module vectors have different ranks ({0} vs {1})")]
    RankMismatch(usize, usize),
    #[error("module vector must hold at least one element")]
    EmptyModule,
}

/// Ring degree `n` and coefficient modulus `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingParams {
    n: usize,
    q: u64,
}

impl RingParams {
    pub fn new(n: usize, q: u64) -> Result<Self, RingError> {
        if n == 0 || !n.is_power_of_two() {
            return Err(RingError::DegreeNotPowerOfTwo(n));
        }
        if q < 2 {
            return Err(RingError::ModulusTooSmall(q));
        }
        let sq = ((q - 1) as u128).checked_mul((q - 1) as u128);
        if sq.and_then(|s| s.checked_mul(n as u128)).is_none() {
            return Err(RingError::AccumulatorOverflow { n, q });
        }
        Ok(Self { n, q })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    /// Bytes per coefficient in the canonical little-endian encoding.
    pub fn coeff_bytes(&self) -> usize {
        let bits = 64 - (self.q - 1).leading_zeros() as usize;
        bits.max(1).div_ceil(8)
    }

    /// Size of one encoded ring element.
    pub fn element_bytes(&self) -> usize {
        self.n * self.coeff_bytes()
    }

    /// Reduces a signed integer into `[0, q)`.
    pub fn reduce_signed(&self, v: i64) -> u64 {
        v.rem_euclid(self.q as i64) as u64
    }

    /// Maps a canonical residue to the centered range `[-q/2, q/2)`.
    pub fn center(&self, c: u64) -> i64 {
        if c < self.q.div_ceil(2) {
            c as i64
        } else {
            c as i64 - self.q as i64
        }
    }

    fn check(&self, other: &RingParams) -> Result<(), RingError> {
        if self != other {
            return Err(RingError::ParamMismatch { left: *self, right: *other });
        }
        Ok(())
    }
}

impl fmt::Display for RingParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(n={}, q={})", self.n, self.q)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RingElement {
    params: RingParams,
    coeffs: Vec<u64>,
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.coeffs.iter().take(8).collect();
        write!(f, "RingElement{} {:?}", self.params, head)?;
        if self.coeffs.len() > 8 {
            write!(f, "..")?;
        }
        Ok(())
    }
}

impl RingElement {
    pub fn zero(params: RingParams) -> Self {
        Self { params, coeffs: vec![0; params.n] }
    }

    /// `X^k` for `k < 2n`; the negacyclic wrap gives `X^n = -1`.
    pub fn monomial(params: RingParams, k: usize) -> Self {
        let mut e = Self::zero(params);
        let k = k % (2 * params.n);
        if k < params.n {
            e.coeffs[k] = 1;
        } else {
            e.coeffs[k - params.n] = params.q - 1;
        }
        e
    }

    /// Builds an element from canonical coefficients, rejecting unreduced input.
    pub fn from_coeffs(params: RingParams, coeffs: Vec<u64>) -> Result<Self, RingError> {
        if coeffs.len() != params.n {
            return Err(RingError::Length { expected: params.n, got: coeffs.len() });
        }
        if let Some((index, &value)) = coeffs.iter().enumerate().find(|(_, &c)| c >= params.q) {
            return Err(RingError::Unreduced { index, value, q: params.q });
        }
        Ok(Self { params, coeffs })
    }

    pub fn from_signed(params: RingParams, values: &[i64]) -> Result<Self, RingError> {
        if values.len() != params.n {
            return Err(RingError::Length { expected: params.n, got: values.len() });
        }
        let coeffs = values.iter().map(|&v| params.reduce_signed(v)).collect();
        Ok(Self { params, coeffs })
    }

    pub fn params(&self) -> RingParams {
        self.params
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn centered(&self) -> Vec<i64> {
        self.coeffs.iter().map(|&c| self.params.center(c)).collect()
    }

    /// Infinity norm of the centered representation.
    pub fn inf_norm(&self) -> u64 {
        self.centered().iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, RingError> {
        self.params.check(&other.params)?;
        let q = self.params.q;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(&a, &b)| {
                let s = a + b;
                if s >= q { s - q } else { s }
            })
            .collect();
        Ok(Self { params: self.params, coeffs })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, RingError> {
        self.params.check(&other.params)?;
        let q = self.params.q;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(&a, &b)| if a >= b { a - b } else { a + q - b })
            .collect();
        Ok(Self { params: self.params, coeffs })
    }

    /// Schoolbook negacyclic product. Positive and wrapped partial products
    /// are accumulated separately so no intermediate leaves `u128`.
    pub fn try_mul(&self, other: &Self) -> Result<Self, RingError> {
        self.params.check(&other.params)?;
        let n = self.params.n;
        let q = self.params.q as u128;
        let b = &other.coeffs;
        let mut pos = vec![0u128; n];
        let mut neg = vec![0u128; n];
        for (i, &ai) in self.coeffs.iter().enumerate() {
            if ai == 0 {
                continue;
            }
            let ai = ai as u128;
            for (p, &bj) in pos[i..].iter_mut().zip(&b[..n - i]) {
                *p += ai * bj as u128;
            }
            for (p, &bj) in neg[..i].iter_mut().zip(&b[n - i..]) {
                *p += ai * bj as u128;
            }
        }
        let coeffs = pos
            .into_iter()
            .zip(neg)
            .map(|(p, m)| ((p % q + q - m % q) % q) as u64)
            .collect();
        Ok(Self { params: self.params, coeffs })
    }

    pub fn scalar_mul(&self, k: u64) -> Self {
        let q = self.params.q as u128;
        let k = k as u128 % q;
        let coeffs = self.coeffs.iter().map(|&c| (c as u128 * k % q) as u64).collect();
        Self { params: self.params, coeffs }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.element_bytes());
        self.write_bytes(&mut out);
        out
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        let w = self.params.coeff_bytes();
        for &c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes()[..w]);
        }
    }

    pub fn from_bytes(params: RingParams, bytes: &[u8]) -> Result<Self, RingError> {
        let w = params.coeff_bytes();
        if bytes.len() != params.element_bytes() {
            return Err(RingError::Length { expected: params.element_bytes(), got: bytes.len() });
        }
        let coeffs = bytes
            .chunks_exact(w)
            .map(|chunk| {
                let mut buf = [0u8; 8];
                buf[..w].copy_from_slice(chunk);
                u64::from_le_bytes(buf)
            })
            .collect();
        Self::from_coeffs(params, coeffs)
    }
}

impl Add for &RingElement {
    type Output = RingElement;
    fn add(self, rhs: Self) -> RingElement {
        self.try_add(rhs).expect("ring_add: parameter mismatch")
    }
}

impl Sub for &RingElement {
    type Output = RingElement;
    fn sub(self, rhs: Self) -> RingElement {
        self.try_sub(rhs).expect("ring_sub: parameter mismatch")
    }
}

impl Mul for &RingElement {
    type Output = RingElement;
    fn mul(self, rhs: Self) -> RingElement {
        self.try_mul(rhs).expect("ring_mul: parameter mismatch")
    }
}

impl Neg for &RingElement {
    type Output = RingElement;
    fn neg(self) -> RingElement {
        let q = self.params.q;
        let coeffs = self.coeffs.iter().map(|&c| if c == 0 { 0 } else { q - c }).collect();
        RingElement { params: self.params, coeffs }
    }
}

/// A vector of `k >= 1` ring elements over one parameter set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleVector {
    elems: Vec<RingElement>,
}

impl ModuleVector {
    pub fn new(elems: Vec<RingElement>) -> Result<Self, RingError> {
        let first = elems.first().ok_or(RingError::EmptyModule)?;
        let params = first.params;
        for e in &elems[1..] {
            params.check(&e.params)?;
        }
        Ok(Self { elems })
    }

    pub fn rank(&self) -> usize {
        self.elems.len()
    }

    pub fn params(&self) -> RingParams {
        self.elems[0].params
    }

    pub fn elems(&self) -> &[RingElement] {
        &self.elems
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, RingError> {
        if self.rank() != other.rank() {
            return Err(RingError::RankMismatch(self.rank(), other.rank()));
        }
        let elems = self
            .elems
            .iter()
            .zip(&other.elems)
            .map(|(a, b)| a.try_add(b))
            .collect::<Result<_, _>>()?;
        Ok(Self { elems })
    }

    /// Inner product `sum_i a_i * b_i`.
    pub fn dot(&self, other: &Self) -> Result<RingElement, RingError> {
        if self.rank() != other.rank() {
            return Err(RingError::RankMismatch(self.rank(), other.rank()));
        }
        let mut acc = RingElement::zero(self.params());
        for (a, b) in self.elems.iter().zip(&other.elems) {
            acc = acc.try_add(&a.try_mul(b)?)?;
        }
        Ok(acc)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.rank() * self.params().element_bytes());
        for e in &self.elems {
            e.write_bytes(&mut out);
        }
        out
    }

    pub fn from_bytes(params: RingParams, rank: usize, bytes: &[u8]) -> Result<Self, RingError> {
        let eb = params.element_bytes();
        if bytes.len() != rank * eb {
            return Err(RingError::Length { expected: rank * eb, got: bytes.len() });
        }
        let elems = bytes
            .chunks_exact(eb)
            .map(|c| RingElement::from_bytes(params, c))
            .collect::<Result<_, _>>()?;
        Self::new(elems)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Full-length convolution followed by an explicit fold with `X^n = -1`.
    fn oracle_mul(a: &[i64], b: &[i64], q: i64) -> Vec<u64> {
        let n = a.len();
        let mut full = vec![0i128; 2 * n];
        for i in 0..n {
            for j in 0..n {
                full[i + j] += a[i] as i128 * b[j] as i128;
            }
        }
        (0..n)
            .map(|k| (full[k] - full[k + n]).rem_euclid(q as i128) as u64)
            .collect()
    }

    fn elem(p: RingParams, v: &[u64]) -> RingElement {
        RingElement::from_coeffs(p, v.to_vec()).unwrap()
    }

    #[test]
    fn params_validation() {
        assert_eq!(RingParams::new(12, 17), Err(RingError::DegreeNotPowerOfTwo(12)));
        assert_eq!(RingParams::new(16, 1), Err(RingError::ModulusTooSmall(1)));
        assert!(RingParams::new(512, (1 << 32) - 5).is_ok());
        assert!(matches!(
            RingParams::new(1 << 20, u64::MAX),
            Err(RingError::AccumulatorOverflow { .. })
        ));
    }

    #[test]
    fn coeff_widths() {
        assert_eq!(RingParams::new(4, 17).unwrap().coeff_bytes(), 1);
        assert_eq!(RingParams::new(256, 3329).unwrap().coeff_bytes(), 2);
        assert_eq!(RingParams::new(512, (1 << 32) - 5).unwrap().coeff_bytes(), 4);
        assert_eq!(RingParams::new(256, 256).unwrap().coeff_bytes(), 1);
        assert_eq!(RingParams::new(256, 257).unwrap().coeff_bytes(), 2);
    }

    #[test]
    fn add_identity_and_wrap() {
        let p = RingParams::new(4, 17).unwrap();
        let a = elem(p, &[3, 16, 0, 9]);
        assert_eq!(&a + &RingElement::zero(p), a);
        let wrapped = &elem(p, &[16, 0, 0, 0]) + &elem(p, &[1, 0, 0, 0]);
        assert_eq!(wrapped.coeffs()[0], 0);
    }

    #[test]
    fn add_matches_fixture() {
        // n=4, q=17; coefficient-wise sums reduced by hand.
        let p = RingParams::new(4, 17).unwrap();
        let a = elem(p, &[5, 12, 16, 8]);
        let b = elem(p, &[14, 9, 1, 3]);
        assert_eq!((&a + &b).coeffs(), &[2, 4, 0, 11]);
    }

    #[test]
    fn mul_annihilator_and_negacyclic() {
        let p = RingParams::new(8, 97).unwrap();
        let a = elem(p, &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(&a * &RingElement::zero(p), RingElement::zero(p));
        let x = RingElement::monomial(p, 1);
        let top = RingElement::monomial(p, 7);
        let prod = &top * &x;
        assert_eq!(prod.coeffs()[0], 96);
        assert!(prod.coeffs()[1..].iter().all(|&c| c == 0));
    }

    #[test]
    fn mul_matches_frozen_fixture() {
        // Frozen from an independent Python convolution; the in-test oracle must agree.
        let p = RingParams::new(8, 97).unwrap();
        let a = elem(p, &[12, 45, 3, 88, 0, 17, 62, 9]);
        let b = elem(p, &[7, 91, 33, 2, 56, 14, 80, 29]);
        let expected = oracle_mul(
            &a.coeffs().iter().map(|&c| c as i64).collect::<Vec<_>>(),
            &b.coeffs().iter().map(|&c| c as i64).collect::<Vec<_>>(),
            97,
        );
        assert_eq!(expected, vec![34, 85, 75, 54, 89, 95, 65, 52]);
        assert_eq!((&a * &b).coeffs(), expected.as_slice());
    }

    #[test]
    fn mismatch_is_an_error() {
        let a = RingElement::zero(RingParams::new(4, 17).unwrap());
        let b = RingElement::zero(RingParams::new(4, 19).unwrap());
        assert!(matches!(a.try_add(&b), Err(RingError::ParamMismatch { .. })));
        assert!(matches!(a.try_mul(&b), Err(RingError::ParamMismatch { .. })));
    }

    #[test]
    fn large_modulus_mul_uses_wide_accumulator() {
        let q = (1u64 << 32) - 5;
        let p = RingParams::new(512, q).unwrap();
        let a = RingElement::from_coeffs(p, vec![q - 1; 512]).unwrap();
        let prod = &a * &a;
        let av: Vec<i64> = vec![-1; 512];
        assert_eq!(prod.coeffs(), oracle_mul(&av, &av, q as i64).as_slice());
    }

    #[test]
    fn centered_view() {
        let p = RingParams::new(4, 17).unwrap();
        let a = elem(p, &[0, 8, 9, 16]);
        assert_eq!(a.centered(), vec![0, 8, -8, -1]);
        let even = RingParams::new(4, 16).unwrap();
        assert_eq!(elem(even, &[7, 8, 9, 15]).centered(), vec![7, -8, -7, -1]);
    }

    #[test]
    fn unreduced_bytes_rejected() {
        let p = RingParams::new(4, 17).unwrap();
        assert!(matches!(
            RingElement::from_bytes(p, &[1, 2, 17, 3]),
            Err(RingError::Unreduced { index: 2, .. })
        ));
        assert!(RingElement::from_bytes(p, &[1, 2, 3]).is_err());
    }

    fn arb_pair_params() -> impl Strategy<Value = (RingParams, Vec<u64>, Vec<u64>, Vec<u64>)> {
        (0u32..=4, 2u64..=257).prop_flat_map(|(logn, q)| {
            let n = 1usize << logn;
            let p = RingParams::new(n, q).unwrap();
            let v = proptest::collection::vec(0..q, n);
            (Just(p), v.clone(), v.clone(), v)
        })
    }

    proptest! {
        #[test]
        fn ring_axioms_against_convolution_oracle((p, a, b, c) in arb_pair_params()) {
            let q = p.q() as i64;
            let (ea, eb, ec) = (elem(p, &a), elem(p, &b), elem(p, &c));
            let ia: Vec<i64> = a.iter().map(|&x| x as i64).collect();
            let ib: Vec<i64> = b.iter().map(|&x| x as i64).collect();
            let prod = &ea * &eb;
            let expected = oracle_mul(&ia, &ib, q);
            prop_assert_eq!(prod.coeffs(), expected.as_slice());
            let sum: Vec<u64> = a.iter().zip(&b).map(|(x, y)| (x + y) % p.q()).collect();
            let added = &ea + &eb;
            prop_assert_eq!(added.coeffs(), sum.as_slice());
            prop_assert_eq!(&ea * &eb, &eb * &ea);
            prop_assert_eq!(&(&ea * &eb) * &ec, &ea * &(&eb * &ec));
            prop_assert_eq!(&ea * &(&eb + &ec), &(&ea * &eb) + &(&ea * &ec));
            prop_assert_eq!(&(&ea + &eb) + &ec, &ea + &(&eb + &ec));
        }

        #[test]
        fn multiplying_by_x_to_the_n_negates((p, a, _, _) in arb_pair_params()) {
            let ea = elem(p, &a);
            let xn = RingElement::monomial(p, p.n());
            prop_assert_eq!(&ea * &xn, -&ea);
        }

        #[test]
        fn byte_encoding_roundtrips((p, a, _, _) in arb_pair_params()) {
            let ea = elem(p, &a);
            let bytes = ea.to_bytes();
            prop_assert_eq!(bytes.len(), p.element_bytes());
            prop_assert_eq!(RingElement::from_bytes(p, &bytes).unwrap(), ea);
        }
    }
}
