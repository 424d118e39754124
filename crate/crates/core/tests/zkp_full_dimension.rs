use zkfl::ring::{sample_gaussian_vec, Rng};
use zkfl::zkp::{
    prove_norm_counted, transcript_without_abort, verify_norm, CommitmentKey, QuantizedGradient, Rejection,
    Verdict, ZkpParams,
};

const D: usize = 108_996;

fn scaled(d: usize, norm: f64, rng: &mut Rng) -> Vec<f64> {
    let g: Vec<f64> = sample_gaussian_vec(d, 1000.0, rng).into_iter().map(|v| v as f64).collect();
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    g.into_iter().map(|v| v * norm / n).collect()
}

#[test]
fn honest_proofs_at_model_dimension() {
    let p = ZkpParams::new(D);
    let key = CommitmentKey::new([21u8; 32]);
    let mut rng = Rng::from_u64(21);
    let mut restarts = 0;
    let trials = 10;
    for _ in 0..trials {
        let grad = QuantizedGradient::quantize(&scaled(D, 0.9 * p.tau, &mut rng), p.scale).unwrap();
        let (proof, r) = prove_norm_counted(&key, &grad, &p, &mut rng).unwrap();
        restarts += r;
        assert_eq!(verify_norm(&key, &proof, p.tau, &p), Verdict::Accept);
        assert_eq!(proof.to_bytes().len(), p.proof_bytes());
    }
    eprintln!("mean restarts {}", restarts as f64 / trials as f64);
}

#[test]
fn scale_fifty_update_fails_the_norm_check() {
    let p = ZkpParams::new(D);
    let key = CommitmentKey::new([22u8; 32]);
    let mut rng = Rng::from_u64(22);
    for _ in 0..5 {
        let g: Vec<f64> = (0..D).map(|_| {
            let u1 = rng.unit_open0();
            let u2 = rng.unit_open0();
            50.0 * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }).collect();
        let grad = QuantizedGradient::quantize(&g, p.scale).unwrap();
        let proof = transcript_without_abort(&key, &grad, &p, &mut rng).unwrap();
        assert_eq!(verify_norm(&key, &proof, p.tau, &p), Verdict::Reject(Rejection::NormBound));
    }
}
