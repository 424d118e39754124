//! Per-round CSV rows, run summaries and atomic output files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use zkfl::protocol::{Mode, PhaseTimings, RoundRecord};

use crate::HarnessError;

pub const CSV_HEADER: [&str; 13] = [
    "round",
    "mode",
    "accuracy",
    "loss",
    "t_train_kem",
    "t_he_enc",
    "t_he_agg",
    "t_he_dec",
    "t_zkp_gen",
    "t_zkp_verify",
    "bytes",
    "n_accepted",
    "n_rejected",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub round: usize,
    pub mode: Mode,
    pub accuracy: f64,
    pub loss: f64,
    pub t_train_kem: f64,
    pub t_he_enc: f64,
    pub t_he_agg: f64,
    pub t_he_dec: f64,
    pub t_zkp_gen: f64,
    pub t_zkp_verify: f64,
    pub bytes: usize,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

impl From<&RoundRecord> for CsvRow {
    fn from(r: &RoundRecord) -> Self {
        let t = r.timings;
        Self {
            round: r.round,
            mode: r.mode,
            accuracy: r.accuracy,
            loss: r.loss,
            t_train_kem: t.train_kem,
            t_he_enc: t.he_enc,
            t_he_agg: t.he_agg,
            t_he_dec: t.he_dec,
            t_zkp_gen: t.zkp_gen,
            t_zkp_verify: t.zkp_verify,
            bytes: r.bytes(),
            n_accepted: r.accepted.len(),
            n_rejected: r.rejected.len(),
        }
    }
}

/// All records of one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRun {
    pub mode: Mode,
    pub records: Vec<RoundRecord>,
}

pub fn csv_bytes(runs: &[ModeRun]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for run in runs {
        for r in &run.records {
            w.serialize(CsvRow::from(r))?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// Percent of the summed phase time spent in each phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub train_kem: f64,
    pub he_enc: f64,
    pub he_agg: f64,
    pub he_dec: f64,
    pub zkp_gen: f64,
    pub zkp_verify: f64,
}

impl TimingBreakdown {
    pub fn from_total(t: &PhaseTimings) -> Option<Self> {
        let total = t.total();
        if total <= 0.0 {
            return None;
        }
        let pct = |v: f64| 100.0 * v / total;
        Some(Self {
            train_kem: pct(t.train_kem),
            he_enc: pct(t.he_enc),
            he_agg: pct(t.he_agg),
            he_dec: pct(t.he_dec),
            zkp_gen: pct(t.zkp_gen),
            zkp_verify: pct(t.zkp_verify),
        })
    }

    pub fn sum(&self) -> f64 {
        self.train_kem + self.he_enc + self.he_agg + self.he_dec + self.zkp_gen + self.zkp_verify
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub rounds: usize,
    pub final_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub mean_round_secs: Option<f64>,
    pub mean_message_kb: Option<f64>,
    pub submitted_malicious: usize,
    pub rejected_malicious: usize,
    pub submitted_honest: usize,
    pub rejected_honest: usize,
    /// `None` when no malicious update was submitted.
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub timing_breakdown_pct: Option<TimingBreakdown>,
}

impl ModeSummary {
    pub fn from_run(run: &ModeRun) -> Self {
        let recs = &run.records;
        let n = recs.len();
        let mut submitted_malicious = 0;
        let mut rejected_malicious = 0;
        let mut submitted_honest = 0;
        let mut rejected_honest = 0;
        let mut total = PhaseTimings::default();
        for r in recs {
            let clients = r.update_norms.len();
            submitted_malicious += r.malicious.len();
            submitted_honest += clients - r.malicious.len();
            for x in &r.rejected {
                if r.malicious.contains(&x.client) {
                    rejected_malicious += 1;
                } else {
                    rejected_honest += 1;
                }
            }
            let t = r.timings;
            total.train_kem += t.train_kem;
            total.he_enc += t.he_enc;
            total.he_agg += t.he_agg;
            total.he_dec += t.he_dec;
            total.zkp_gen += t.zkp_gen;
            total.zkp_verify += t.zkp_verify;
        }
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let mean = |v: f64| (n > 0).then(|| v / n as f64);
        Self {
            mode: run.mode,
            rounds: n,
            final_accuracy: recs.last().map(|r| r.accuracy),
            final_loss: recs.last().map(|r| r.loss),
            mean_round_secs: mean(total.total()),
            mean_message_kb: mean(recs.iter().map(|r| r.bytes() as f64 / 1024.0).sum()),
            submitted_malicious,
            rejected_malicious,
            submitted_honest,
            rejected_honest,
            detection_rate: ratio(rejected_malicious, submitted_malicious),
            false_positive_rate: ratio(rejected_honest, submitted_honest),
            timing_breakdown_pct: TimingBreakdown::from_total(&total),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    /// No rounds were run.
    pub degenerate: bool,
    pub modes: Vec<ModeSummary>,
}

impl ExperimentSummary {
    pub fn new(seed: u64, runs: &[ModeRun]) -> Self {
        Self {
            seed,
            degenerate: runs.iter().all(|r| r.records.is_empty()),
            modes: runs.iter().map(ModeSummary::from_run).collect(),
        }
    }

    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_outputs(dir: &Path, summary: &ExperimentSummary, runs: &[ModeRun]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("rounds.csv"), &csv_bytes(runs)?)?;
    write_atomic(&dir.join("rounds.json"), &serde_json::to_vec_pretty(runs)?)?;
    write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(summary)?)?;
    Ok(())
}

pub fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

pub fn print_summary(summary: &ExperimentSummary) {
    println!(
        "{:<12} {:>8} {:>8} {:>10} {:>12} {:>9} {:>6}",
        "mode", "acc", "loss", "round_s", "msg_kb", "detect", "fpr"
    );
    for m in &summary.modes {
        println!(
            "{:<12} {:>8} {:>8} {:>10} {:>12} {:>9} {:>6}",
            m.mode.as_str(),
            fmt_opt(m.final_accuracy, 3),
            fmt_opt(m.final_loss, 4),
            fmt_opt(m.mean_round_secs, 3),
            fmt_opt(m.mean_message_kb, 1),
            fmt_opt(m.detection_rate, 3),
            fmt_opt(m.false_positive_rate, 3),
        );
    }
    for m in &summary.modes {
        if let Some(b) = m.timing_breakdown_pct {
            println!(
                "{:<12} train+kem {:.1}% | he enc {:.1}% agg {:.1}% dec {:.1}% | zkp gen {:.1}% verify {:.1}%",
                m.mode.as_str(),
                b.train_kem,
                b.he_enc,
                b.he_agg,
                b.he_dec,
                b.zkp_gen,
                b.zkp_verify
            );
        }
    }
}
