//! Paired-seed runs, ablation sweeps, the HE error report and the timing bench.

use serde::{Deserialize, Serialize};
use zkfl::protocol::{run_experiment, Mode, RoundRecord};

use crate::config::ScenarioConfig;
use crate::report::{ExperimentSummary, ModeRun, ModeSummary};
use crate::HarnessError;

/// Runs every configured mode from the same seed.
pub fn run_modes(cfg: &ScenarioConfig) -> Result<Vec<ModeRun>, HarnessError> {
    cfg.validate()?;
    cfg.modes
        .iter()
        .map(|&mode| Ok(ModeRun { mode, records: run_experiment(&cfg.protocol(mode))? }))
        .collect()
}

pub fn run_single(cfg: &ScenarioConfig, mode: Mode) -> Result<ModeRun, HarnessError> {
    let cfg = ScenarioConfig { modes: vec![mode], ..cfg.clone() };
    Ok(run_modes(&cfg)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Malicious-client count or threshold, depending on the sweep.
    pub setting: f64,
    pub final_accuracy: Option<f64>,
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub rejected_honest: usize,
}

impl AblationRow {
    fn new(setting: f64, s: &ModeSummary) -> Self {
        Self {
            setting,
            final_accuracy: s.final_accuracy,
            detection_rate: s.detection_rate,
            false_positive_rate: s.false_positive_rate,
            rejected_honest: s.rejected_honest,
        }
    }
}

/// Malicious ids for a sweep of `count` adversaries: client 3 first, then upwards, wrapping.
pub fn malicious_ids(count: usize, n_clients: usize) -> Vec<usize> {
    (0..count).map(|i| (2 + i) % n_clients + 1).collect()
}

pub fn ablate_malicious(cfg: &ScenarioConfig, counts: &[usize]) -> Result<Vec<AblationRow>, HarnessError> {
    counts
        .iter()
        .map(|&k| {
            if k >= cfg.n_clients {
                return Err(HarnessError::Config(format!("{k} malicious clients leave no honest quorum")));
            }
            let c = ScenarioConfig { malicious_ids: malicious_ids(k, cfg.n_clients), ..cfg.clone() };
            let run = run_single(&c, Mode::ZkflPq)?;
            Ok(AblationRow::new(k as f64, &ModeSummary::from_run(&run)))
        })
        .collect()
}

pub fn ablate_threshold(cfg: &ScenarioConfig, taus: &[f64]) -> Result<Vec<AblationRow>, HarnessError> {
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(HarnessError::Config("thresholds must be a non-empty list of positive values".into()));
    }
    taus.iter()
        .map(|&tau| {
            let run = run_single(&ScenarioConfig { tau, ..cfg.clone() }, Mode::ZkflPq)?;
            Ok(AblationRow::new(tau, &ModeSummary::from_run(&run)))
        })
        .collect()
}

pub fn print_ablation(label: &str, rows: &[AblationRow]) {
    use crate::report::fmt_opt;
    println!("{:>10} {:>8} {:>9} {:>6} {:>10}", label, "acc", "detect", "fpr", "fp_count");
    for r in rows {
        println!(
            "{:>10} {:>8} {:>9} {:>6} {:>10}",
            r.setting,
            fmt_opt(r.final_accuracy, 3),
            fmt_opt(r.detection_rate, 3),
            fmt_opt(r.false_positive_rate, 3),
            r.rejected_honest
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeErrorRow {
    pub round: usize,
    pub mean_abs_error: f64,
    pub relative_error: f64,
    pub mean_abs_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeErrorReport {
    pub rows: Vec<HeErrorRow>,
    pub max_mean_abs_error: f64,
    /// Mean relative error over the first half of the rounds.
    pub early_relative_error: f64,
    /// Mean relative error over the second half of the rounds.
    pub late_relative_error: f64,
    /// Rounds whose averaged covered slice is exactly zero.
    pub zero_update_rounds: usize,
}

impl HeErrorReport {
    pub fn from_records(records: &[RoundRecord]) -> Option<Self> {
        let rows: Vec<HeErrorRow> = records
            .iter()
            .filter_map(|r| {
                r.he_error.map(|e| HeErrorRow {
                    round: r.round,
                    mean_abs_error: e.mean_abs_error,
                    relative_error: e.relative_error,
                    mean_abs_value: e.mean_abs_value,
                })
            })
            .collect();
        if rows.len() < 2 {
            return None;
        }
        let half = rows.len().div_ceil(2);
        let mean = |s: &[HeErrorRow]| s.iter().map(|r| r.relative_error).sum::<f64>() / s.len() as f64;
        Some(Self {
            max_mean_abs_error: rows.iter().map(|r| r.mean_abs_error).fold(0.0, f64::max),
            early_relative_error: mean(&rows[..half]),
            late_relative_error: mean(&rows[half..]),
            zero_update_rounds: rows.iter().filter(|r| r.mean_abs_value == 0.0).count(),
            rows,
        })
    }

    pub fn passes(&self, mae_tolerance: f64) -> bool {
        self.max_mean_abs_error < mae_tolerance && self.late_relative_error < self.early_relative_error
    }
}

pub fn he_error_report(cfg: &ScenarioConfig) -> Result<Option<HeErrorReport>, HarnessError> {
    let run = run_single(cfg, Mode::ZkflPq)?;
    Ok(HeErrorReport::from_records(&run.records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub standard_round_secs: f64,
    pub zkfl_round_secs: f64,
    /// Share of the zkfl_pq round spent generating and verifying proofs.
    pub zkp_fraction: f64,
}

impl BenchReport {
    pub fn from_summary(summary: &ExperimentSummary) -> Option<Self> {
        let std = summary.mode(Mode::StandardFl)?;
        let zk = summary.mode(Mode::ZkflPq)?;
        let b = zk.timing_breakdown_pct?;
        Some(Self {
            standard_round_secs: std.mean_round_secs?,
            zkfl_round_secs: zk.mean_round_secs?,
            zkp_fraction: (b.zkp_gen + b.zkp_verify) / 100.0,
        })
    }

    pub fn ordering_holds(&self) -> bool {
        self.zkfl_round_secs > self.standard_round_secs
    }

    pub fn zkp_share_holds(&self) -> bool {
        self.zkp_fraction < 0.05
    }
}

pub fn bench(cfg: &ScenarioConfig) -> Result<BenchReport, HarnessError> {
    let c = ScenarioConfig { modes: vec![Mode::StandardFl, Mode::ZkflPq], timing: true, ..cfg.clone() };
    let runs = run_modes(&c)?;
    BenchReport::from_summary(&ExperimentSummary::new(c.seed, &runs))
        .ok_or_else(|| HarnessError::Config("bench needs at least one round".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malicious_id_sweep() {
        assert_eq!(malicious_ids(0, 5), Vec::<usize>::new());
        assert_eq!(malicious_ids(1, 5), vec![3]);
        assert_eq!(malicious_ids(3, 5), vec![3, 4, 5]);
        assert_eq!(malicious_ids(4, 5), vec![3, 4, 5, 1]);
    }

    #[test]
    fn ablation_rejects_bad_inputs() {
        let cfg = ScenarioConfig::default();
        assert!(matches!(ablate_malicious(&cfg, &[5]), Err(HarnessError::Config(_))));
        assert!(matches!(ablate_threshold(&cfg, &[]), Err(HarnessError::Config(_))));
        assert!(matches!(ablate_threshold(&cfg, &[0.0]), Err(HarnessError::Config(_))));
    }
}
