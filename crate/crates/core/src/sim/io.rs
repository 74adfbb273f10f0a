use std::io::Write;
use std::path::Path;

use super::{Metrics, RunLog, SimError};

/// Fixed leading columns of the run log; per-rotor columns follow (see
/// [`log_header`]).
pub const LOG_COLUMNS: &[&str] = &[
    "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz",
];

const TRAILING: &[&str] = &[
    "ref_px", "ref_py", "ref_pz", "ref_qw", "ref_qx", "ref_qy", "ref_qz", "f_dz", "qp_iters", "kkt_residual", "cost",
];

/// Full header: [`LOG_COLUMNS`], then `alpha_i`, `thrust_i`, `cmd_thrust_i`,
/// `cmd_alpha_i` for each rotor, then the reference pose, `f_dz` and the
/// solver statistics.
pub fn log_header(rotors: usize) -> Vec<String> {
    let mut h: Vec<String> = LOG_COLUMNS.iter().map(|s| s.to_string()).collect();
    for prefix in ["alpha", "thrust", "cmd_thrust", "cmd_alpha"] {
        h.extend((1..=rotors).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(TRAILING.iter().map(|s| s.to_string()));
    h
}

pub fn write_log_csv<W: Write>(log: &RunLog, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let rotors = log.records.first().map_or(0, |r| r.state.rotor_count());
    w.write_record(log_header(rotors))?;
    for r in &log.records {
        let s = &r.state;
        let q = &s.attitude;
        let rq = &r.reference.attitude;
        let mut row: Vec<String> = [r.t]
            .iter()
            .chain(s.position.iter())
            .chain(s.velocity.iter())
            .chain([q.w, q.i, q.j, q.k].iter())
            .chain(s.body_rate.iter())
            .chain(s.servo.iter())
            .chain(r.thrust.iter())
            .chain(r.input.thrust.iter())
            .chain(r.input.servo.iter())
            .chain(r.reference.position.iter())
            .chain([rq.w, rq.i, rq.j, rq.k, r.f_dz].iter())
            .map(|v| v.to_string())
            .collect();
        row.push(r.stats.qp_iterations.to_string());
        row.push(r.stats.kkt_residual.to_string());
        row.push(r.stats.cost.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock solve times, one row per controller tick. Kept out of the
/// main log because they differ between otherwise identical runs.
pub fn write_timing_csv<W: Write>(log: &RunLog, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tick", "solve_time_ms"])?;
    for (i, t) in log.solve_times_ms.iter().enumerate() {
        w.write_record([i.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_json(metrics: &Metrics, path: &Path) -> Result<(), SimError> {
    let text = serde_json::to_string_pretty(metrics)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
