use serde::{Deserialize, Serialize};

use super::RunLog;
use crate::model::quat::{quat_to_rpy, wrap_angle};

/// Summary of one run. Fields that do not apply are `None` (JSON `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse_pos_x_m: Option<f64>,
    pub rmse_pos_y_m: Option<f64>,
    pub rmse_pos_z_m: Option<f64>,
    pub rmse_att_roll_deg: Option<f64>,
    pub rmse_att_pitch_deg: Option<f64>,
    pub rmse_att_yaw_deg: Option<f64>,
    pub overshoot_z_pct: Option<f64>,
    pub settle_s: Option<f64>,
    pub cmd_total_variation: Option<f64>,
    pub solve_time_ms_p50: Option<f64>,
    pub solve_time_ms_p99: Option<f64>,
    pub status: String,
}

fn rmse(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    (count > 0).then(|| (sum / count as f64).sqrt())
}

/// Nearest-rank percentile of `values` (`q` in `[0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Per-axis roll/pitch/yaw error (rad, wrapped) at record `k`.
pub fn rpy_error(log: &RunLog, k: usize) -> [f64; 3] {
    let r = &log.records[k];
    let a = quat_to_rpy(&r.state.attitude);
    let b = quat_to_rpy(&r.reference.attitude);
    [wrap_angle(a.x - b.x), wrap_angle(a.y - b.y), wrap_angle(a.z - b.z)]
}

/// Sum over controller ticks of `‖α_c(t+1) - α_c(t)‖₁`.
pub fn servo_command_variation(log: &RunLog) -> f64 {
    log.commands.windows(2).map(|w| (&w[1].servo - &w[0].servo).abs().sum()).sum()
}

/// Largest per-tick change of any thrust command (N).
pub fn max_thrust_command_step(log: &RunLog) -> f64 {
    log.commands.windows(2).map(|w| (&w[1].thrust - &w[0].thrust).amax()).fold(0.0, f64::max)
}

pub fn metrics(log: &RunLog) -> Metrics {
    let recs = &log.records;
    let pos = |axis: usize| rmse(recs.iter().map(move |r| r.state.position[axis] - r.reference.position[axis]));
    let att = |axis: usize| rmse((0..recs.len()).map(|k| rpy_error(log, k)[axis].to_degrees()));

    let (t0, p0, target) = log.first_step;
    let seg: Vec<_> = recs.iter().filter(|r| r.t >= t0 && r.t < log.first_segment_end).collect();
    let dz = target.z - p0.z;
    let overshoot_z_pct = (dz.abs() > 1e-6 && !seg.is_empty()).then(|| {
        let peak = seg.iter().map(|r| (r.state.position.z - target.z) * dz.signum()).fold(f64::NEG_INFINITY, f64::max);
        (peak.max(0.0) / dz.abs()) * 100.0
    });
    let step = (target - p0).norm();
    let settle_s = if step > 1e-6 && !seg.is_empty() {
        let band = 0.05 * step;
        let last_out = seg.iter().rposition(|r| (r.state.position - target).norm() > band);
        match last_out {
            None => Some(0.0),
            Some(i) if i + 1 < seg.len() => Some(seg[i + 1].t - t0),
            Some(_) => None,
        }
    } else {
        None
    };

    Metrics {
        rmse_pos_x_m: pos(0),
        rmse_pos_y_m: pos(1),
        rmse_pos_z_m: pos(2),
        rmse_att_roll_deg: att(0),
        rmse_att_pitch_deg: att(1),
        rmse_att_yaw_deg: att(2),
        overshoot_z_pct,
        settle_s,
        cmd_total_variation: (!log.commands.is_empty()).then(|| servo_command_variation(log)),
        solve_time_ms_p50: percentile(&log.solve_times_ms, 50.0),
        solve_time_ms_p99: percentile(&log.solve_times_ms, 99.0),
        status: log.status.as_str().to_string(),
    }
}
