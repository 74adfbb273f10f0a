use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use tiltmpc::sim::{
    ablation_compare, metrics, write_log_csv, write_metrics_json, write_timing_csv, AblationReport, Metrics, RunLog,
    RunStatus, Scenario,
};
use tiltmpc::sysid::{fit_first_order, fit_quadratic_thrust, FirstOrderFit, StepLogSeries};

/// Writes `log.csv`, `timing.csv` and `metrics.json` into `dir`.
pub fn write_run(log: &RunLog, dir: &Path) -> Result<Metrics> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let m = metrics(log);
    let open = |name: &str| -> Result<BufWriter<File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("cannot write {}", p.display()))?))
    };
    write_log_csv(log, open("log.csv")?)?;
    write_timing_csv(log, open("timing.csv")?)?;
    write_metrics_json(&m, &dir.join("metrics.json"))?;
    Ok(m)
}

/// Runs one scenario; returns whether it completed.
pub fn run_single(scenario: &Scenario, out: &Path) -> Result<bool> {
    let log = tiltmpc::sim::run_closed_loop(scenario)?;
    let m = write_run(&log, out)?;
    println!("{}", serde_json::to_string_pretty(&m)?);
    if log.status != RunStatus::Completed {
        eprintln!("{}: run {} at t = {:.3} s", scenario.name, log.status.as_str(), log.records.last().map_or(0.0, |r| r.t));
    }
    Ok(log.status == RunStatus::Completed)
}

/// Runs the three prediction models; only the servo-aware arms count
/// towards success.
pub fn run_ablation(scenario: &Scenario, out: &Path) -> Result<bool> {
    let (report, logs) = ablation_compare(scenario)?;
    for (v, log) in report.variants.iter().zip(&logs) {
        write_run(log, &out.join(v.variant.label()))?;
    }
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(out.join("ablation.json"), format!("{text}\n"))?;
    print_ablation(&report);
    Ok(report.variants[1..].iter().all(|v| v.status == RunStatus::Completed))
}

fn print_ablation(r: &AblationReport) {
    println!("{:<20} {:>10} {:>10} {:>12} {:>12}", "variant", "status", "servo TV", "pos RMSE", "max dF");
    for v in &r.variants {
        println!(
            "{:<20} {:>10} {:>10.3} {:>12.4} {:>12.3}",
            v.variant.label(),
            v.status.as_str(),
            v.servo_total_variation,
            v.position_rmse,
            v.max_thrust_step
        );
    }
    println!("TV ratio (no servo / servo): {:.2}", r.tv_ratio);
}

#[derive(Debug, Serialize)]
struct ThrustFit {
    thrust_coeff: f64,
    samples: usize,
}

pub fn run_sysid_first_order(input: &Path, units: &str, out: &Path) -> Result<FirstOrderFit> {
    let f = File::open(input).with_context(|| format!("cannot read {}", input.display()))?;
    let series = StepLogSeries::from_csv(f, units).with_context(|| format!("invalid step log {}", input.display()))?;
    let fit = fit_first_order(&series)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("fit.json"), serde_json::to_string_pretty(&fit)? + "\n")?;
    println!("{}", serde_json::to_string_pretty(&fit)?);
    Ok(fit)
}

/// Reads `omega,thrust` rows and fits `f = k_t Ω²`.
pub fn run_sysid_thrust(input: &Path, out: &Path) -> Result<f64> {
    #[derive(serde::Deserialize)]
    struct Row {
        omega: f64,
        thrust: f64,
    }
    let f = File::open(input).with_context(|| format!("cannot read {}", input.display()))?;
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let samples = rd
        .deserialize::<Row>()
        .map(|r| r.map(|r| (r.omega, r.thrust)))
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("invalid thrust log {}", input.display()))?;
    let kt = fit_quadratic_thrust(&samples)?;
    let fit = ThrustFit { thrust_coeff: kt, samples: samples.len() };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("fit.json"), serde_json::to_string_pretty(&fit)? + "\n")?;
    println!("{}", serde_json::to_string_pretty(&fit)?);
    Ok(kt)
}
