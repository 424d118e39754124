//! Flat scenario file. Every key is optional; missing keys take the defaults
//! of the reference experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};
use zkfl::fl::{DataConfig, SgdConfig};
use zkfl::protocol::{Mode, ProofStrategy, ProtocolConfig, TlsCost};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub modes: Vec<Mode>,
    pub seed: u64,
    pub rounds: usize,
    pub n_clients: usize,
    pub alpha: f64,
    pub tau: f64,
    pub adaptive_k: Option<f64>,
    pub malicious_ids: Vec<usize>,
    pub malicious_start_round: usize,
    pub malicious_scale: f64,
    pub proof_strategy: ProofStrategy,
    pub he_coverage: usize,
    pub he_scale: f64,
    pub zkp_scale: f64,
    pub kappa: u32,
    pub server_eta: f64,
    pub samples: usize,
    pub mean_scale: f64,
    pub noise_scale: f64,
    pub smoothing: f64,
    pub test_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub tls_base_secs: f64,
    pub tls_per_byte_secs: f64,
    pub timing: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self {
            modes: Mode::ALL.to_vec(),
            seed: p.seed,
            rounds: p.rounds,
            n_clients: p.n_clients,
            alpha: p.alpha,
            tau: p.tau,
            adaptive_k: p.adaptive_k,
            malicious_ids: p.malicious_ids,
            malicious_start_round: p.malicious_start_round,
            malicious_scale: p.malicious_scale,
            proof_strategy: p.proof_strategy,
            he_coverage: p.he_coverage,
            he_scale: p.he_scale,
            zkp_scale: p.zkp_scale,
            kappa: p.kappa,
            server_eta: p.server_eta,
            samples: p.data.samples,
            mean_scale: p.data.mean_scale,
            noise_scale: p.data.noise_scale,
            smoothing: p.data.smoothing,
            test_fraction: p.data.test_fraction,
            epochs: p.sgd.epochs,
            lr: p.sgd.lr,
            batch: p.sgd.batch,
            tls_base_secs: p.tls.base_secs,
            tls_per_byte_secs: p.tls.per_byte_secs,
            timing: p.timing,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.modes.is_empty() {
            return Err(HarnessError::Config("modes must not be empty".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) || self.samples < 2 {
            return Err(HarnessError::Config("need samples >= 2 and 0 < test_fraction < 1".into()));
        }
        for m in &self.modes {
            self.protocol(*m).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn protocol(&self, mode: Mode) -> ProtocolConfig {
        ProtocolConfig {
            mode,
            rounds: self.rounds,
            n_clients: self.n_clients,
            tau: self.tau,
            malicious_ids: self.malicious_ids.clone(),
            malicious_start_round: self.malicious_start_round,
            malicious_scale: self.malicious_scale,
            proof_strategy: self.proof_strategy,
            he_coverage: self.he_coverage,
            he_scale: self.he_scale,
            zkp_scale: self.zkp_scale,
            kappa: self.kappa,
            server_eta: self.server_eta,
            alpha: self.alpha,
            adaptive_k: self.adaptive_k,
            seed: self.seed,
            data: DataConfig {
                samples: self.samples,
                mean_scale: self.mean_scale,
                noise_scale: self.noise_scale,
                smoothing: self.smoothing,
                test_fraction: self.test_fraction,
            },
            sgd: SgdConfig { epochs: self.epochs, lr: self.lr, batch: self.batch },
            tls: TlsCost { base_secs: self.tls_base_secs, per_byte_secs: self.tls_per_byte_secs },
            timing: self.timing,
        }
    }
}
