//! Small seeded oracle suites over every layer, reported as a pass/fail matrix.

use ndarray::Axis;
use serde::{Deserialize, Serialize};
use zkfl::fl::{generate_dataset, DataConfig, MlpModel, PARAM_COUNT};
use zkfl::he::{bfv_add, bfv_decrypt, bfv_encrypt, bfv_keygen, BfvParams, QuantizedBlock};
use zkfl::kem::{kem_decaps, kem_encaps, kem_keygen, KemParams};
use zkfl::protocol::byzantine_update;
use zkfl::ring::{RingElement, RingParams, Rng};
use zkfl::zkp::{
    chosen_challenge_transcript, garbage_transcript, prove_norm, transcript_without_abort, verify_norm_with, Checks,
    CommitmentKey, QuantizedGradient, ZkpParams,
};

use crate::HarnessError;

/// Names one verifier check (`norm`, `challenge` or `algebraic`) to switch off.
pub const FAULT_ENV: &str = "ZKFL_SELFTEST_DISABLE_CHECK";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn checks_from_env() -> Result<Checks, HarnessError> {
    match std::env::var(FAULT_ENV) {
        Err(_) => Ok(Checks::ALL),
        Ok(v) => checks_without(&v),
    }
}

pub fn checks_without(name: &str) -> Result<Checks, HarnessError> {
    let mut c = Checks::ALL;
    match name {
        "" => {}
        "norm" => c.norm = false,
        "challenge" => c.challenge = false,
        "algebraic" => c.algebraic = false,
        other => return Err(HarnessError::Config(format!("{FAULT_ENV}={other:?} is not a verifier check"))),
    }
    Ok(c)
}

pub fn run_selftest(checks: Checks) -> Vec<SuiteResult> {
    vec![ring_suite(), kem_suite(), he_suite(), zkp_completeness_suite(checks), zkp_soundness_suite(checks), gradient_suite()]
}

pub fn print_matrix(results: &[SuiteResult]) {
    println!("{:<18} {:>7} {:>9}  result", "suite", "trials", "failures");
    for r in results {
        println!("{:<18} {:>7} {:>9}  {}", r.name, r.trials, r.failures, if r.passed() { "PASS" } else { "FAIL" });
    }
}

fn suite(name: &str, trials: usize, mut ok: impl FnMut(usize) -> bool) -> SuiteResult {
    let failures = (0..trials).filter(|&i| !ok(i)).count();
    SuiteResult { name: name.to_string(), trials, failures }
}

fn naive_negacyclic(a: &[i64], b: &[i64], q: i64) -> Vec<u64> {
    let n = a.len();
    let mut acc = vec![0i128; n];
    for i in 0..n {
        for j in 0..n {
            let p = a[i] as i128 * b[j] as i128;
            if i + j < n {
                acc[i + j] += p;
            } else {
                acc[i + j - n] -= p;
            }
        }
    }
    acc.into_iter().map(|v| v.rem_euclid(q as i128) as u64).collect()
}

pub fn ring_suite() -> SuiteResult {
    let mut rng = Rng::from_u64(0x5e1f_0001);
    suite("ring/convolution", 200, |_| {
        let n = 1usize << (1 + rng.below(4));
        let q = 2 + rng.below(1 << 20);
        let p = RingParams::new(n, q).expect("small ring");
        let a: Vec<i64> = (0..n).map(|_| rng.below(q) as i64).collect();
        let b: Vec<i64> = (0..n).map(|_| rng.below(q) as i64).collect();
        let x = RingElement::from_signed(p, &a).expect("length n");
        let y = RingElement::from_signed(p, &b).expect("length n");
        x.try_mul(&y).map(|z| z.coeffs() == naive_negacyclic(&a, &b, q as i64).as_slice()).unwrap_or(false)
    })
}

pub fn kem_suite() -> SuiteResult {
    let params = KemParams::default();
    let mut rng = Rng::from_u64(0x5e1f_0002);
    suite("kem/roundtrip", 100, |_| {
        let kp = kem_keygen(&params, &mut rng);
        let (ct, k) = kem_encaps(&kp.ek, &mut rng);
        kem_decaps(&kp.dk, &ct) == k
    })
}

pub fn he_suite() -> SuiteResult {
    let params = BfvParams::default();
    let mut rng = Rng::from_u64(0x5e1f_0003);
    let kp = bfv_keygen(&params, &mut rng);
    let (n, t) = (params.ring().n(), params.t());
    suite("he/homomorphism", 20, |_| {
        let ms: Vec<Vec<u64>> = (0..5).map(|_| (0..n).map(|_| rng.below(t)).collect()).collect();
        let mut acc = None;
        for m in &ms {
            let ct = bfv_encrypt(&kp.pk, &QuantizedBlock { values: m.clone(), scale: 1.0 }, &params, &mut rng)
                .expect("in-range block");
            acc = Some(match acc {
                None => ct,
                Some(a) => bfv_add(&a, &ct, &params).expect("five additions fit the budget"),
            });
        }
        let expected: Vec<u64> = (0..n).map(|j| ms.iter().map(|m| m[j]).sum::<u64>() % t).collect();
        bfv_decrypt(&kp.sk, &acc.expect("five ciphertexts"), &params).values == expected
    })
}

const ZKP_DIM: usize = 2000;

fn honest_gradient(params: &ZkpParams, rng: &mut Rng) -> QuantizedGradient {
    let g = byzantine_update(params.d, 1.0, rng);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = 0.9 * params.tau;
    QuantizedGradient::quantize(&g.iter().map(|v| v * target / norm).collect::<Vec<_>>(), params.scale)
        .expect("finite gradient")
}

pub fn zkp_completeness_suite(checks: Checks) -> SuiteResult {
    let params = ZkpParams::new(ZKP_DIM);
    let key = CommitmentKey::new([0x11; 32]);
    let mut rng = Rng::from_u64(0x5e1f_0004);
    suite("zkp/completeness", 20, |_| {
        let grad = honest_gradient(&params, &mut rng);
        prove_norm(&key, &grad, &params, &mut rng)
            .map(|p| verify_norm_with(&key, &p, params.tau, &params, checks).is_accept())
            .unwrap_or(false)
    })
}

pub fn zkp_soundness_suite(checks: Checks) -> SuiteResult {
    let params = ZkpParams::new(ZKP_DIM);
    let key = CommitmentKey::new([0x22; 32]);
    let mut rng = Rng::from_u64(0x5e1f_0005);
    let rejects = |p: &zkfl::zkp::NormProof| !verify_norm_with(&key, p, params.tau, &params, checks).is_accept();
    suite("zkp/soundness", 80, |i| {
        let bad = QuantizedGradient::quantize(&byzantine_update(params.d, 50.0, &mut rng), params.scale)
            .expect("finite gradient");
        let proof = match i % 4 {
            0 => transcript_without_abort(&key, &bad, &params, &mut rng).expect("valid params"),
            1 => garbage_transcript(&params, &mut rng),
            2 => chosen_challenge_transcript(&key, &bad, 0, &params, &mut rng).expect("valid params"),
            _ => {
                let grad = honest_gradient(&params, &mut rng);
                let mut p = prove_norm(&key, &grad, &params, &mut rng).expect("honest statement");
                let j = rng.below(params.d as u64) as usize;
                p.z[j] += 1;
                p
            }
        };
        rejects(&proof)
    })
}

pub fn gradient_suite() -> SuiteResult {
    let data = generate_dataset(3, &DataConfig { samples: 40, ..DataConfig::default() });
    let model = MlpModel::new(&mut Rng::from_u64(0x5e1f_0006));
    let idx: Vec<usize> = data.train.iter().take(8).copied().collect();
    let x = data.features.select(Axis(0), &idx);
    let y: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
    let (_, grad) = model.loss_and_gradient(x.view(), &y);
    let w = model.to_flat();
    let mut rng = Rng::from_u64(0x5e1f_0007);
    let h = 1e-5;
    suite("fl/finite-diff", 10, |_| {
        let j = rng.below(PARAM_COUNT as u64) as usize;
        let mut plus = w.clone();
        plus[j] += h;
        let mut minus = w.clone();
        minus[j] -= h;
        let lp = model.from_flat(&plus).expect("flat length").loss_and_gradient(x.view(), &y).0;
        let lm = model.from_flat(&minus).expect("flat length").loss_and_gradient(x.view(), &y).0;
        let fd = (lp - lm) / (2.0 * h);
        (fd - grad[j]).abs() <= 1e-4 * fd.abs().max(grad[j].abs()).max(1e-6)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_names() {
        assert_eq!(checks_without("").unwrap(), Checks::ALL);
        assert!(!checks_without("norm").unwrap().norm);
        assert!(!checks_without("challenge").unwrap().challenge);
        assert!(!checks_without("algebraic").unwrap().algebraic);
        assert!(checks_without("all").is_err());
    }

    #[test]
    fn naive_oracle_wraps_negatively() {
        // x * x = x^2 in Z_q[X]/(X^2 + 1) means x^2 = -1
        assert_eq!(naive_negacyclic(&[0, 1], &[0, 1], 7), vec![6, 0]);
    }
}
