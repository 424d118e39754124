use zkfl::protocol::{run_experiment, Experiment, Mode, ProofStrategy, ProtocolConfig, RejectReason, RoundRecord};

fn short(mode: Mode) -> ProtocolConfig {
    ProtocolConfig { mode, rounds: 4, malicious_start_round: 2, timing: false, ..ProtocolConfig::default() }
}

fn assert_exclusion_sound(records: &[RoundRecord], cfg: &ProtocolConfig) {
    for r in records {
        let mut seen: Vec<usize> = r.accepted.iter().copied().chain(r.rejected.iter().map(|x| x.client)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (1..=cfg.n_clients).collect::<Vec<_>>(), "round {}", r.round);
        for c in 1..=cfg.n_clients {
            let malicious = cfg.is_malicious(c, r.round);
            assert_eq!(r.malicious.contains(&c), malicious);
            assert_eq!(r.accepted.contains(&c), !malicious, "round {} client {c}", r.round);
        }
    }
}

#[test]
fn honest_prover_adversary_is_excluded_by_the_norm_check() {
    let cfg = short(Mode::ZkflPq);
    let records = run_experiment(&cfg).unwrap();
    assert_exclusion_sound(&records, &cfg);
    for r in &records {
        assert!(r.rejected.iter().all(|x| x.reason == RejectReason::ZkpNorm));
        assert!(r.update_norms.iter().enumerate().all(|(i, n)| r.malicious.contains(&(i + 1)) || *n < cfg.tau));
    }
    assert_eq!(records.iter().map(|r| r.rejected.len()).sum::<usize>(), 3);
    assert_eq!(records.last().unwrap().accuracy, 1.0);
}

#[test]
fn garbage_transcripts_are_excluded() {
    let cfg = ProtocolConfig { proof_strategy: ProofStrategy::Garbage, ..short(Mode::ZkflPq) };
    let records = run_experiment(&cfg).unwrap();
    assert_exclusion_sound(&records, &cfg);
    for x in records.iter().flat_map(|r| &r.rejected) {
        assert!(matches!(x.reason, RejectReason::ZkpChallenge | RejectReason::ZkpAlgebraic), "{:?}", x.reason);
    }
}

#[test]
fn adaptive_threshold_still_excludes_the_adversary() {
    let cfg = ProtocolConfig { adaptive_k: Some(2.0), ..short(Mode::ZkflPq) };
    let mut exp = Experiment::new(cfg.clone()).unwrap();
    let mut taus = Vec::new();
    for _ in 0..cfg.rounds {
        let r = exp.run_round().unwrap();
        taus.push(r.tau);
        for &m in &r.malicious {
            assert!(r.rejected.iter().any(|x| x.client == m));
        }
    }
    assert_eq!(taus[0], cfg.tau);
    assert_ne!(taus[1], cfg.tau);
}

#[test]
fn encrypted_run_tracks_plaintext_fedavg_without_adversaries() {
    let base = ProtocolConfig { rounds: 2, malicious_ids: vec![], timing: false, ..ProtocolConfig::default() };
    let plain = run_experiment(&ProtocolConfig { mode: Mode::StandardFl, ..base.clone() }).unwrap();
    let enc = run_experiment(&ProtocolConfig { mode: Mode::ZkflPq, ..base }).unwrap();
    for (p, e) in plain.iter().zip(&enc) {
        let mad = p.applied_update.iter().zip(&e.applied_update).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / p.applied_update.len() as f64;
        assert!(mad <= 1e-3, "round {}: {mad}", p.round);
        assert!((p.accuracy - e.accuracy).abs() <= 0.01);
        let he = e.he_error.unwrap();
        assert!(he.mean_abs_error < 1e-3);
    }
}

#[test]
fn kem_transport_does_not_change_training() {
    let a = run_experiment(&short(Mode::StandardFl)).unwrap();
    let b = run_experiment(&short(Mode::FlKem)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.applied_update), bits(&y.applied_update));
        assert!(y.bytes() > x.bytes());
    }
}

#[test]
fn undefended_modes_accept_everyone() {
    let cfg = short(Mode::StandardFl);
    let records = run_experiment(&cfg).unwrap();
    assert!(records.iter().all(|r| r.rejected.is_empty() && r.accepted.len() == cfg.n_clients));
}

#[test]
fn rounds_are_reproducible() {
    let cfg = short(Mode::ZkflPq);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
}
