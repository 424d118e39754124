//! One federated round end to end, for the three transport configurations.
//!
//! `zkfl_pq` clients train, prove the norm of their quantized update,
//! encapsulate a session key to the server, encrypt the covered parameter
//! slice under BFV and seal everything with AES-GCM. The server opens each
//! payload, verifies the proof, sums the accepted ciphertexts and hands only
//! the sum to the [`Decryptor`].

use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fl::{
    apply_update, evaluate, generate_dataset, local_sgd, partition_dirichlet, ClientShard, DataConfig, Dataset,
    FlError, GradientUpdate, MlpModel, SgdConfig, PARAM_COUNT,
};
use crate::he::{
    bfv_add, bfv_decrypt, bfv_encrypt, bfv_keygen, dequantize_sum, quantize_gradient, BfvParams, BfvPublicKey,
    BfvSecretKey, HeCiphertext, HeError, QuantizedBlock,
};
use crate::kem::{kem_decaps, kem_encaps, kem_keygen, KemCiphertext, KemKeyPair, KemParams};
use crate::ring::Rng;
use crate::sym::{open, seal, SealedPayload};
use crate::zkp::{
    garbage_transcript, prove_norm, transcript_without_abort, verify_norm, CommitmentKey, NormProof,
    QuantizedGradient, Rejection, ZkpError, ZkpParams,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Zkp(#[from] ZkpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    StandardFl,
    FlKem,
    ZkflPq,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::StandardFl, Mode::FlKem, Mode::ZkflPq];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StandardFl => "standard_fl",
            Mode::FlKem => "fl_kem",
            Mode::ZkflPq => "zkfl_pq",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// What a malicious client attaches to its poisoned update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofStrategy {
    /// Runs the honest prover; when it refuses, submits a single unaborted transcript.
    HonestProver,
    /// Submits a random well-formed transcript.
    Garbage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub mode: Mode,
    pub rounds: usize,
    pub n_clients: usize,
    pub tau: f64,
    /// Client ids are `1..=n_clients`.
    pub malicious_ids: Vec<usize>,
    pub malicious_start_round: usize,
    pub malicious_scale: f64,
    pub proof_strategy: ProofStrategy,
    pub he_coverage: usize,
    pub he_scale: f64,
    pub zkp_scale: f64,
    pub kappa: u32,
    pub server_eta: f64,
    pub alpha: f64,
    /// Sensitivity `k` of the adaptive threshold; `None` keeps `tau` fixed.
    pub adaptive_k: Option<f64>,
    pub seed: u64,
    pub data: DataConfig,
    pub sgd: SgdConfig,
    pub tls: TlsCost,
    /// Record wall-clock phase timings; off gives reproducible records.
    pub timing: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            mode: Mode::ZkflPq,
            rounds: 10,
            n_clients: 5,
            tau: 5.0,
            malicious_ids: vec![3],
            malicious_start_round: 4,
            malicious_scale: 50.0,
            proof_strategy: ProofStrategy::HonestProver,
            he_coverage: 512,
            he_scale: 256.0,
            zkp_scale: 1024.0,
            kappa: 4,
            server_eta: 1.0,
            alpha: 0.5,
            adaptive_k: None,
            seed: 42,
            data: DataConfig::default(),
            sgd: SgdConfig::default(),
            tls: TlsCost::default(),
            timing: true,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: &str| Err(ProtocolError::Config(m.to_string()));
        if self.n_clients == 0 {
            return bad("n_clients must be positive");
        }
        if self.malicious_ids.iter().any(|&id| id == 0 || id > self.n_clients) {
            return bad("malicious_ids must lie in 1..=n_clients");
        }
        let mut ids = self.malicious_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.malicious_ids.len() {
            return bad("malicious_ids contains duplicates");
        }
        if ids.len() >= self.n_clients {
            return bad("at least one client must be honest");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if self.he_coverage > PARAM_COUNT {
            return bad("he_coverage exceeds the parameter count");
        }
        if !(self.he_scale > 0.0 && self.zkp_scale > 0.0 && self.server_eta.is_finite() && self.alpha > 0.0) {
            return bad("scales and alpha must be positive");
        }
        if !(self.malicious_scale >= 0.0 && self.malicious_scale.is_finite()) {
            return bad("malicious_scale must be non-negative");
        }
        if let Some(k) = self.adaptive_k {
            if !(k >= 0.0 && k.is_finite()) {
                return bad("adaptive_k must be non-negative");
            }
        }
        if self.sgd.batch == 0 {
            return bad("batch size must be positive");
        }
        self.zkp_params(self.tau).validate()?;
        Ok(())
    }

    pub fn zkp_params(&self, tau: f64) -> ZkpParams {
        ZkpParams { kappa: self.kappa, tau, scale: self.zkp_scale, ..ZkpParams::new(PARAM_COUNT) }
    }

    pub fn is_malicious(&self, client: usize, round: usize) -> bool {
        round >= self.malicious_start_round && self.malicious_ids.contains(&client)
    }
}

/// Fixed cost model standing in for a TLS channel in the baseline:
/// `base + bytes * per_byte`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsCost {
    pub base_secs: f64,
    pub per_byte_secs: f64,
}

impl Default for TlsCost {
    /// One handshake of about 2 ms plus record encryption at 1 GB/s.
    fn default() -> Self {
        Self { base_secs: 2e-3, per_byte_secs: 1e-9 }
    }
}

pub fn simulate_tls_baseline(payload_bytes: usize, cost: &TlsCost) -> Duration {
    Duration::from_secs_f64(cost.base_secs + payload_bytes as f64 * cost.per_byte_secs)
}

/// I.i.d. standard normal entries times `scale`.
pub fn byzantine_update(dim: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
}

/// `mean + k * stddev` (population convention); `None` with fewer than two norms.
pub fn adaptive_threshold(prev_norms: &[f64], k: f64) -> Option<f64> {
    if prev_norms.len() < 2 {
        return None;
    }
    let n = prev_norms.len() as f64;
    let mean = prev_norms.iter().sum::<f64>() / n;
    let var = prev_norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(mean + k * var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Aead,
    Malformed,
    NoProof,
    ZkpNorm,
    ZkpChallenge,
    ZkpAlgebraic,
    ZkpMalformed,
}

impl From<Rejection> for RejectReason {
    fn from(r: Rejection) -> Self {
        match r {
            Rejection::NormBound => RejectReason::ZkpNorm,
            Rejection::Challenge => RejectReason::ZkpChallenge,
            Rejection::Algebraic => RejectReason::ZkpAlgebraic,
            Rejection::Malformed => RejectReason::ZkpMalformed,
        }
    }
}

/// Seconds spent per phase, summed over clients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub train_kem: f64,
    pub he_enc: f64,
    pub he_agg: f64,
    pub he_dec: f64,
    pub zkp_gen: f64,
    pub zkp_verify: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.train_kem + self.he_enc + self.he_agg + self.he_dec + self.zkp_gen + self.zkp_verify
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub client: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mode: Mode,
    pub accuracy: f64,
    pub loss: f64,
    pub tau: f64,
    pub accepted: Vec<usize>,
    pub rejected: Vec<Rejected>,
    /// Clients that submitted a poisoned update this round.
    pub malicious: Vec<usize>,
    /// Plaintext update norms per client, in id order.
    pub update_norms: Vec<f64>,
    pub timings: PhaseTimings,
    pub bytes_per_client: Vec<usize>,
    /// Aggregated update actually applied (empty when the round is skipped).
    #[serde(skip)]
    pub applied_update: Vec<f64>,
    /// Covered-slice error of the encrypted path against the plaintext average.
    pub he_error: Option<HeErrorStats>,
    pub skipped: bool,
}

impl RoundRecord {
    pub fn bytes(&self) -> usize {
        self.bytes_per_client.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeErrorStats {
    pub mean_abs_error: f64,
    pub relative_error: f64,
    pub mean_abs_value: f64,
}

/// Holds the BFV secret key; accepts only ciphertexts produced by [`aggregate`].
///
/// A single client's ciphertext does not type-check:
///
/// ```compile_fail
/// # use zkfl::protocol::Decryptor;
/// # use zkfl::he::HeCiphertext;
/// fn leak(d: &Decryptor, c: &HeCiphertext) {
///     d.decrypt(c);
/// }
/// ```
pub struct Decryptor {
    params: BfvParams,
    sk: BfvSecretKey,
}

impl Decryptor {
    pub fn decrypt(&self, agg: &AggregateCiphertext) -> QuantizedBlock {
        bfv_decrypt(&self.sk, &agg.0, &self.params)
    }
}

/// Homomorphic sum over a client set.
#[derive(Debug, Clone)]
pub struct AggregateCiphertext(HeCiphertext);

impl AggregateCiphertext {
    pub fn contributors(&self) -> usize {
        self.0.adds()
    }
}

pub fn aggregate(cts: &[&HeCiphertext], params: &BfvParams) -> Result<Option<AggregateCiphertext>, HeError> {
    let Some((first, rest)) = cts.split_first() else {
        return Ok(None);
    };
    let mut acc = (*first).clone();
    for c in rest {
        acc = bfv_add(&acc, c, params)?;
    }
    Ok(Some(AggregateCiphertext(acc)))
}

/// Decoded contents of a zkfl_pq payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ZkflPayload {
    pub he_slice: Vec<HeCiphertext>,
    /// Quantized update beyond the covered slice, at the proof's scale.
    pub remainder: Vec<i32>,
    pub proof: Option<NormProof>,
}

impl ZkflPayload {
    /// `u32 count || ciphertexts || u32 len || i32 remainder || u8 flag || proof`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.he_slice.len() as u32).to_le_bytes());
        for c in &self.he_slice {
            out.extend_from_slice(&c.to_bytes());
        }
        out.extend_from_slice(&(self.remainder.len() as u32).to_le_bytes());
        for v in &self.remainder {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.proof {
            Some(p) => {
                out.push(1);
                out.extend_from_slice(&p.to_bytes());
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], he: &BfvParams, zkp: &ZkpParams) -> Option<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Option<&[u8]> {
            let s = bytes.get(pos..pos.checked_add(n)?)?;
            pos += n;
            Some(s)
        };
        let count = u32::from_le_bytes(take(4)?.try_into().ok()?) as usize;
        let ct_len = he.ciphertext_bytes();
        let mut he_slice = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            he_slice.push(HeCiphertext::from_bytes(he, take(ct_len)?).ok()?);
        }
        let rem_len = u32::from_le_bytes(take(4)?.try_into().ok()?) as usize;
        let remainder = take(rem_len.checked_mul(4)?)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let proof = match take(1)?[0] {
            0 => None,
            1 => Some(NormProof::from_bytes(zkp, take(zkp.proof_bytes())?).ok()?),
            _ => return None,
        };
        if pos != bytes.len() {
            return None;
        }
        Some(Self { he_slice, remainder, proof })
    }
}

/// Wire message of one client in one round.
#[derive(Debug, Clone)]
pub enum ClientMessage {
    Plain(Vec<u8>),
    Sealed { kem_ct: KemCiphertext, sealed: SealedPayload },
}

impl ClientMessage {
    pub fn wire_bytes(&self) -> usize {
        match self {
            ClientMessage::Plain(b) => b.len(),
            ClientMessage::Sealed { kem_ct, sealed } => kem_ct.to_bytes().len() + sealed.wire_len(),
        }
    }
}

fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn f64_from_bytes(b: &[u8]) -> Option<Vec<f64>> {
    if b.len() != PARAM_COUNT * 8 {
        return None;
    }
    Some(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

struct Clock(bool);

impl Clock {
    fn time<T>(&self, acc: &mut f64, f: impl FnOnce() -> T) -> T {
        if !self.0 {
            return f();
        }
        let start = Instant::now();
        let out = f();
        *acc += start.elapsed().as_secs_f64();
        out
    }
}

/// Experiment state shared by all rounds of one mode.
pub struct Experiment {
    pub config: ProtocolConfig,
    pub data: Dataset,
    pub shards: Vec<ClientShard>,
    pub model: MlpModel,
    master: [u8; 32],
    server_kem: KemKeyPair,
    bfv: BfvParams,
    bfv_pk: BfvPublicKey,
    decryptor: Decryptor,
    commitment_key: CommitmentKey,
    round: usize,
    prev_norms: Vec<f64>,
}

impl Experiment {
    pub fn new(config: ProtocolConfig) -> Result<Self, ProtocolError> {
        let data = generate_dataset(config.seed, &config.data);
        Self::with_dataset(config, data)
    }

    pub fn with_dataset(config: ProtocolConfig, data: Dataset) -> Result<Self, ProtocolError> {
        config.validate()?;
        let master = Rng::derive_seed(&[0; 32], b"zkfl/experiment", &[config.seed]);
        let shards = partition_dirichlet(&data, config.n_clients, config.alpha, &mut Rng::derive(&master, b"partition", &[]))?;
        let model = MlpModel::new(&mut Rng::derive(&master, b"model", &[]));
        let server_kem = kem_keygen(&KemParams::default(), &mut Rng::derive(&master, b"server-kem", &[]));
        let bfv = BfvParams::default();
        let pair = bfv_keygen(&bfv, &mut Rng::derive(&master, b"bfv", &[]));
        let commitment_key = CommitmentKey::new(Rng::derive_seed(&master, b"zkp-matrix", &[]));
        Ok(Self {
            config,
            data,
            shards,
            model,
            master,
            server_kem,
            bfv,
            bfv_pk: pair.pk,
            decryptor: Decryptor { params: bfv, sk: pair.sk },
            commitment_key,
            round: 0,
            prev_norms: Vec::new(),
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn commitment_key(&self) -> &CommitmentKey {
        &self.commitment_key
    }

    /// Public threshold for the next round.
    pub fn current_tau(&self) -> f64 {
        match self.config.adaptive_k {
            Some(k) => adaptive_threshold(&self.prev_norms, k)
                .filter(|t| *t > 0.0 && t.is_finite())
                .unwrap_or(self.config.tau),
            None => self.config.tau,
        }
    }

    /// Update client `client` submits in round `round` against the current model.
    pub fn client_update(&self, client: usize, round: usize) -> Result<GradientUpdate, ProtocolError> {
        let shard = &self.shards[client - 1];
        let mut rng = Rng::derive(&self.master, b"train", &[round as u64, client as u64]);
        if self.config.is_malicious(client, round) {
            let mut brng = Rng::derive(&self.master, b"byzantine", &[round as u64, client as u64]);
            let delta = byzantine_update(PARAM_COUNT, self.config.malicious_scale, &mut brng);
            return Ok(GradientUpdate { delta, client, round });
        }
        Ok(local_sgd(&self.model, &self.data, shard, &self.config.sgd, round, &mut rng)?)
    }

    /// Runs the next round and advances the model.
    pub fn run_round(&mut self) -> Result<RoundRecord, ProtocolError> {
        self.round += 1;
        let round = self.round;
        let cfg = self.config.clone();
        let clock = Clock(cfg.timing);
        let tau = self.current_tau();
        let zkp = cfg.zkp_params(tau);
        let mut t = PhaseTimings::default();
        let mut updates = Vec::with_capacity(cfg.n_clients);
        let mut messages = Vec::with_capacity(cfg.n_clients);
        for client in 1..=cfg.n_clients {
            let update = clock.time(&mut t.train_kem, || self.client_update(client, round))?;
            let mut crng = Rng::derive(&self.master, b"client-crypto", &[round as u64, client as u64]);
            let msg = match cfg.mode {
                Mode::StandardFl => {
                    let bytes = f64_bytes(&update.delta);
                    if cfg.timing {
                        t.train_kem += simulate_tls_baseline(bytes.len(), &cfg.tls).as_secs_f64();
                    }
                    ClientMessage::Plain(bytes)
                }
                Mode::FlKem => clock.time(&mut t.train_kem, || {
                    let (kem_ct, key) = kem_encaps(&self.server_kem.ek, &mut crng);
                    let sealed = seal(&key, &f64_bytes(&update.delta), &mut crng);
                    ClientMessage::Sealed { kem_ct, sealed }
                }),
                Mode::ZkflPq => self.zkfl_client(client, round, &update, &zkp, &clock, &mut t, &mut crng)?,
            };
            updates.push(update);
            messages.push(msg);
        }
        let bytes_per_client = messages.iter().map(ClientMessage::wire_bytes).collect();
        let update_norms: Vec<f64> = updates.iter().map(GradientUpdate::norm).collect();
        let malicious: Vec<usize> = (1..=cfg.n_clients).filter(|&c| cfg.is_malicious(c, round)).collect();

        let (accepted, rejected, aggregated, he_error) = match cfg.mode {
            Mode::StandardFl | Mode::FlKem => self.plain_server(&messages, &clock, &mut t),
            Mode::ZkflPq => self.zkfl_server(&messages, &updates, &zkp, &clock, &mut t)?,
        };
        let skipped = aggregated.is_none();
        let applied_update = match aggregated {
            Some(delta) => {
                self.model = apply_update(&self.model, &delta, cfg.server_eta)?;
                delta
            }
            None => Vec::new(),
        };
        self.prev_norms = accepted.iter().map(|&c| update_norms[c - 1]).collect();
        let (accuracy, loss) = evaluate(&self.model, &self.data);
        Ok(RoundRecord {
            round,
            mode: cfg.mode,
            accuracy,
            loss,
            tau,
            accepted,
            rejected,
            malicious,
            update_norms,
            timings: if cfg.timing { t } else { PhaseTimings::default() },
            bytes_per_client,
            applied_update,
            he_error,
            skipped,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn zkfl_client(
        &self,
        client: usize,
        round: usize,
        update: &GradientUpdate,
        zkp: &ZkpParams,
        clock: &Clock,
        t: &mut PhaseTimings,
        rng: &mut Rng,
    ) -> Result<ClientMessage, ProtocolError> {
        let cfg = &self.config;
        let malicious = cfg.is_malicious(client, round);
        // entries no client could prove or encode are zeroed; such a client sends no proof
        let lim = 2f64.powi(40);
        let encodable = update.delta.iter().all(|v| v.abs() < lim);
        let delta: Vec<f64> = update.delta.iter().map(|&v| if v.abs() < lim { v } else { 0.0 }).collect();
        let grad = QuantizedGradient::quantize(&delta, zkp.scale)?;
        let proof = clock.time(&mut t.zkp_gen, || -> Result<Option<NormProof>, ProtocolError> {
            if malicious && cfg.proof_strategy == ProofStrategy::Garbage {
                return Ok(Some(garbage_transcript(zkp, rng)));
            }
            match prove_norm(&self.commitment_key, &grad, zkp, rng) {
                Ok(p) if encodable => Ok(Some(p)),
                Ok(_) => Ok(None),
                Err(ZkpError::NormExceedsThreshold { .. } | ZkpError::RestartLimit(_)) if malicious => {
                    Ok(Some(transcript_without_abort(&self.commitment_key, &grad, zkp, rng)?))
                }
                Err(ZkpError::NormExceedsThreshold { .. } | ZkpError::RestartLimit(_)) => Ok(None),
                Err(e) => Err(e.into()),
            }
        })?;
        let (kem_ct, key) = clock.time(&mut t.train_kem, || kem_encaps(&self.server_kem.ek, rng));
        let cov = cfg.he_coverage;
        let he_slice = clock.time(&mut t.he_enc, || -> Result<Vec<HeCiphertext>, ProtocolError> {
            let covered: Vec<f64> = if malicious || proof.is_none() {
                // content of a submission the server will reject; kept inside the plaintext range
                let lim = (self.bfv.t() / 2 - 1) as f64 / cfg.he_scale;
                delta[..cov].iter().map(|v| v.clamp(-lim, lim)).collect()
            } else {
                delta[..cov].to_vec()
            };
            quantize_gradient(&covered, cfg.he_scale, &self.bfv)?
                .iter()
                .map(|b| bfv_encrypt(&self.bfv_pk, b, &self.bfv, rng).map_err(Into::into))
                .collect()
        })?;
        let remainder = grad.w_tilde[cov..]
            .iter()
            .map(|&v| v.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
            .collect();
        let payload = ZkflPayload { he_slice, remainder, proof };
        let sealed = clock.time(&mut t.train_kem, || seal(&key, &payload.to_bytes(), rng));
        Ok(ClientMessage::Sealed { kem_ct, sealed })
    }

    #[allow(clippy::type_complexity)]
    fn plain_server(
        &self,
        messages: &[ClientMessage],
        clock: &Clock,
        t: &mut PhaseTimings,
    ) -> (Vec<usize>, Vec<Rejected>, Option<Vec<f64>>, Option<HeErrorStats>) {
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        let mut sum = vec![0.0; PARAM_COUNT];
        for (i, msg) in messages.iter().enumerate() {
            let client = i + 1;
            let body = clock.time(&mut t.train_kem, || match msg {
                ClientMessage::Plain(b) => Ok(b.clone()),
                ClientMessage::Sealed { kem_ct, sealed } => {
                    open(&kem_decaps(&self.server_kem.dk, kem_ct), sealed).map_err(|_| RejectReason::Aead)
                }
            });
            match body.and_then(|b| f64_from_bytes(&b).ok_or(RejectReason::Malformed)) {
                Ok(delta) => {
                    for (s, d) in sum.iter_mut().zip(&delta) {
                        *s += d;
                    }
                    accepted.push(client);
                }
                Err(reason) => rejected.push(Rejected { client, reason }),
            }
        }
        if accepted.is_empty() {
            return (accepted, rejected, None, None);
        }
        let n = accepted.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        (accepted, rejected, Some(sum), None)
    }

    #[allow(clippy::type_complexity)]
    fn zkfl_server(
        &self,
        messages: &[ClientMessage],
        updates: &[GradientUpdate],
        zkp: &ZkpParams,
        clock: &Clock,
        t: &mut PhaseTimings,
    ) -> Result<(Vec<usize>, Vec<Rejected>, Option<Vec<f64>>, Option<HeErrorStats>), ProtocolError> {
        let cfg = &self.config;
        let cov = cfg.he_coverage;
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        let mut valid: Vec<ZkflPayload> = Vec::new();
        for (i, msg) in messages.iter().enumerate() {
            let client = i + 1;
            let ClientMessage::Sealed { kem_ct, sealed } = msg else {
                rejected.push(Rejected { client, reason: RejectReason::Malformed });
                continue;
            };
            let opened = clock.time(&mut t.train_kem, || open(&kem_decaps(&self.server_kem.dk, kem_ct), sealed));
            let Ok(body) = opened else {
                rejected.push(Rejected { client, reason: RejectReason::Aead });
                continue;
            };
            let payload = ZkflPayload::from_bytes(&body, &self.bfv, zkp)
                .filter(|p| p.he_slice.len() == cov.div_ceil(self.bfv.ring().n()) && p.remainder.len() == PARAM_COUNT - cov);
            let Some(payload) = payload else {
                rejected.push(Rejected { client, reason: RejectReason::Malformed });
                continue;
            };
            let Some(proof) = &payload.proof else {
                rejected.push(Rejected { client, reason: RejectReason::NoProof });
                continue;
            };
            let verdict = clock.time(&mut t.zkp_verify, || verify_norm(&self.commitment_key, proof, zkp.tau, zkp));
            match verdict {
                crate::zkp::Verdict::Accept => {
                    accepted.push(client);
                    valid.push(payload);
                }
                crate::zkp::Verdict::Reject(r) => rejected.push(Rejected { client, reason: r.into() }),
            }
        }
        if accepted.is_empty() {
            return Ok((accepted, rejected, None, None));
        }
        let n = accepted.len();
        let blocks = cov.div_ceil(self.bfv.ring().n());
        let mut sums = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let cts: Vec<&HeCiphertext> = valid.iter().map(|p| &p.he_slice[b]).collect();
            let agg = clock.time(&mut t.he_agg, || aggregate(&cts, &self.bfv))?.expect("non-empty client set");
            sums.push(agg);
        }
        let decrypted: Vec<QuantizedBlock> = clock.time(&mut t.he_dec, || sums.iter().map(|a| self.decryptor.decrypt(a)).collect());
        let mut avg = dequantize_sum(&decrypted, cfg.he_scale, n, &self.bfv)?;
        avg.truncate(cov);
        let inv = 1.0 / (n as f64 * zkp.scale);
        let mut rem = vec![0i64; PARAM_COUNT - cov];
        for p in &valid {
            for (r, &v) in rem.iter_mut().zip(&p.remainder) {
                *r += v as i64;
            }
        }
        avg.extend(rem.iter().map(|&v| v as f64 * inv));

        let truth: Vec<f64> = (0..cov)
            .map(|j| accepted.iter().map(|&c| updates[c - 1].delta[j]).sum::<f64>() / n as f64)
            .collect();
        let he_error = (cov > 0).then(|| {
            let abs_err: f64 = avg[..cov].iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum();
            let abs_val: f64 = truth.iter().map(|v| v.abs()).sum();
            HeErrorStats {
                mean_abs_error: abs_err / cov as f64,
                relative_error: if abs_val > 0.0 { abs_err / abs_val } else { 0.0 },
                mean_abs_value: abs_val / cov as f64,
            }
        });
        Ok((accepted, rejected, Some(avg), he_error))
    }
}

/// Runs `config.rounds` rounds from a fresh state.
pub fn run_experiment(config: &ProtocolConfig) -> Result<Vec<RoundRecord>, ProtocolError> {
    let mut exp = Experiment::new(config.clone())?;
    (0..config.rounds).map(|_| exp.run_round()).collect()
}
