use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zkfl::protocol::Mode;
use zkfl_harness::config::ScenarioConfig;
use zkfl_harness::experiments::{
    ablate_malicious, ablate_threshold, bench, he_error_report, print_ablation, run_modes, AblationRow,
};
use zkfl_harness::report::{print_summary, write_atomic, write_outputs, ExperimentSummary};
use zkfl_harness::selftest::{checks_from_env, print_matrix, run_selftest};
use zkfl_harness::HarnessError;

#[derive(Parser)]
#[command(name = "zkfl", version, about = "Post-quantum verifiable federated learning experiments")]
struct Cli {
    /// Scenario file (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Restricts `run` to a single mode.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Writes zero timings so output files are reproducible byte for byte.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs all configured modes on paired seeds.
    Run,
    /// Sweeps the number of malicious clients.
    AblateMalicious {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        counts: Vec<usize>,
    },
    /// Sweeps the norm threshold.
    AblateThreshold {
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,50")]
        taus: Vec<f64>,
    },
    /// Reports the encrypted-aggregation error on the covered slice.
    HeError,
    /// Runs the oracle suites of every layer.
    Selftest,
    /// Checks the timing ordering of the modes.
    Bench,
}

fn scenario(cli: &Cli) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.modes = vec![m];
    }
    if cli.no_timing {
        cfg.timing = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_ablation(cli: &Cli, name: &str, rows: &[AblationRow]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(&cli.out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    write_atomic(&cli.out.join(name), &bytes)
}

fn execute(cli: &Cli) -> Result<bool, HarnessError> {
    let cfg = scenario(cli)?;
    match &cli.command {
        Command::Run => {
            let runs = run_modes(&cfg)?;
            let summary = ExperimentSummary::new(cfg.seed, &runs);
            write_outputs(&cli.out, &summary, &runs)?;
            print_summary(&summary);
            Ok(true)
        }
        Command::AblateMalicious { counts } => {
            let rows = ablate_malicious(&cfg, counts)?;
            print_ablation("malicious", &rows);
            write_ablation(cli, "ablate_malicious.csv", &rows)?;
            Ok(true)
        }
        Command::AblateThreshold { taus } => {
            let rows = ablate_threshold(&cfg, taus)?;
            print_ablation("tau", &rows);
            write_ablation(cli, "ablate_threshold.csv", &rows)?;
            Ok(true)
        }
        Command::HeError => {
            let Some(report) = he_error_report(&cfg)? else {
                return Err(HarnessError::Config("the error report needs at least two rounds".into()));
            };
            println!("{:>5} {:>12} {:>10} {:>12}", "round", "mae", "rel_err", "mean_abs");
            for r in &report.rows {
                println!("{:>5} {:>12.3e} {:>10.4} {:>12.3e}", r.round, r.mean_abs_error, r.relative_error, r.mean_abs_value);
            }
            println!(
                "max mae {:.3e}, relative error early {:.4} late {:.4}, zero-update rounds {}",
                report.max_mean_abs_error, report.early_relative_error, report.late_relative_error, report.zero_update_rounds
            );
            std::fs::create_dir_all(&cli.out)?;
            write_atomic(&cli.out.join("he_error.json"), &serde_json::to_vec_pretty(&report)?)?;
            Ok(report.passes(1e-3))
        }
        Command::Selftest => {
            let results = run_selftest(checks_from_env()?);
            print_matrix(&results);
            Ok(results.iter().all(|r| r.passed()))
        }
        Command::Bench => {
            let b = bench(&cfg)?;
            println!("standard_fl mean round {:.3} s, zkfl_pq mean round {:.3} s", b.standard_round_secs, b.zkfl_round_secs);
            println!("{} zkfl_pq round time > standard_fl", if b.ordering_holds() { "PASS" } else { "FAIL" });
            println!(
                "{} proof generation + verification share {:.1}% < 5%",
                if b.zkp_share_holds() { "PASS" } else { "FAIL" },
                100.0 * b.zkp_fraction
            );
            Ok(b.ordering_holds() && b.zkp_share_holds())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
