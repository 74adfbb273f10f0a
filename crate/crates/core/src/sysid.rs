//! First-order actuator identification from step logs, and the quadratic
//! rotor-speed-to-thrust fit.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SysidError {
    #[error("no step found in the command channel")]
    NoStep,
    #[error("response carries no information ({0})")]
    NonIdentifiable(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Sampled step experiment. Timestamps must be strictly increasing and
/// (near) uniformly spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogSeries {
    pub times: Vec<f64>,
    pub command: Vec<f64>,
    pub response: Vec<f64>,
    pub units: String,
}

pub const MIN_SAMPLES: usize = 10;

impl StepLogSeries {
    pub fn new(times: Vec<f64>, command: Vec<f64>, response: Vec<f64>, units: impl Into<String>) -> Result<Self, SysidError> {
        let s = Self { times, command, response, units: units.into() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SysidError> {
        let n = self.times.len();
        if self.command.len() != n || self.response.len() != n {
            return Err(SysidError::InvalidSeries("column lengths differ".into()));
        }
        if n < MIN_SAMPLES {
            return Err(SysidError::InvalidSeries(format!("{n} samples, at least {MIN_SAMPLES} needed")));
        }
        if self.times.iter().chain(&self.command).chain(&self.response).any(|v| !v.is_finite()) {
            return Err(SysidError::InvalidSeries("non-finite value".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SysidError::InvalidSeries("timestamps are not strictly increasing".into()));
        }
        let dt = self.sample_time();
        if self.times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 0.05 * dt) {
            return Err(SysidError::InvalidSeries("sampling is not uniform (5% tolerance)".into()));
        }
        Ok(())
    }

    pub fn sample_time(&self) -> f64 {
        (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
    }

    /// Reads `time,command,response` columns (header required).
    pub fn from_csv<R: Read>(reader: R, units: &str) -> Result<Self, SysidError> {
        #[derive(Deserialize)]
        struct Row {
            time: f64,
            command: f64,
            response: f64,
        }
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let (mut t, mut c, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for row in rd.deserialize() {
            let r: Row = row?;
            t.push(r.time);
            c.push(r.command);
            y.push(r.response);
        }
        Self::new(t, c, y, units)
    }

    /// Command at time `t` (piecewise linear between samples, held at the ends).
    fn command_at(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t <= ts[0] {
            return self.command[0];
        }
        let k = ts.partition_point(|&s| s <= t);
        if k >= ts.len() {
            return self.command[ts.len() - 1];
        }
        let (t0, t1) = (ts[k - 1], ts[k]);
        let w = (t - t0) / (t1 - t0);
        self.command[k - 1] * (1.0 - w) + self.command[k] * w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderFit {
    /// s
    pub time_constant: f64,
    /// s
    pub dead_time: f64,
    /// Normalized-RMSE fit of the free-run simulation, percent.
    pub fit_pct: f64,
}

/// Least-squares pole for a given dead time: `y[k+1] - u[k] = a (y[k] - u[k])`.
fn pole_for(series: &StepLogSeries, delayed: &[f64]) -> Option<(f64, f64)> {
    let y = &series.response;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..y.len() - 1 {
        let x = y[k] - delayed[k];
        num += (y[k + 1] - delayed[k]) * x;
        den += x * x;
    }
    if den <= 0.0 {
        return None;
    }
    let a = num / den;
    let sse = (0..y.len() - 1).map(|k| (y[k + 1] - delayed[k] - a * (y[k] - delayed[k])).powi(2)).sum();
    Some((a, sse))
}

fn delayed_command(series: &StepLogSeries, dead_time: f64) -> Vec<f64> {
    series.times.iter().map(|&t| series.command_at(t - dead_time)).collect()
}

fn prediction_error(series: &StepLogSeries, dead_time: f64) -> f64 {
    pole_for(series, &delayed_command(series, dead_time)).map_or(f64::INFINITY, |(_, sse)| sse)
}

const GRID: f64 = 1e-3;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Fits `τ ẏ = u(t - d) - y` by one-step-ahead prediction-error least
/// squares: closed-form pole for each dead time, dead time on a 1 ms grid
/// refined by golden section.
pub fn fit_first_order(series: &StepLogSeries) -> Result<FirstOrderFit, SysidError> {
    series.validate()?;
    let (cmin, cmax) = series.command.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = cmax.abs().max(cmin.abs()).max(f64::MIN_POSITIVE);
    if cmax - cmin <= 1e-9 * scale {
        return Err(SysidError::NoStep);
    }
    let y = &series.response;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    let yscale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(scale);
    if spread <= 1e-9 * yscale * (y.len() as f64).sqrt() {
        return Err(SysidError::NonIdentifiable("constant response".into()));
    }

    // the first command change bounds the useful dead-time range
    let first_change = series.command.windows(2).position(|w| (w[1] - w[0]).abs() > 1e-9 * scale).unwrap_or(0);
    let t_step = series.times[first_change];
    let max_dead = 0.5 * (series.times[series.times.len() - 1] - t_step);
    let steps = (max_dead / GRID).floor() as usize;
    let mut best = (0.0, prediction_error(series, 0.0));
    for i in 1..=steps {
        let d = i as f64 * GRID;
        let e = prediction_error(series, d);
        if e < best.1 {
            best = (d, e);
        }
    }
    let lo = (best.0 - GRID).max(0.0);
    let hi = (best.0 + GRID).min(max_dead.max(0.0));
    let dead_time = if hi > lo {
        let d = golden_section(|d| prediction_error(series, d), lo, hi, 1e-7);
        if prediction_error(series, d) <= best.1 { d } else { best.0 }
    } else {
        best.0
    };

    let delayed = delayed_command(series, dead_time);
    let (a, _) = pole_for(series, &delayed).ok_or_else(|| SysidError::NonIdentifiable("no excitation after the delay".into()))?;
    if !(a > 0.0 && a < 1.0) {
        return Err(SysidError::NonIdentifiable(format!("pole {a} outside (0, 1)")));
    }
    let time_constant = -series.sample_time() / a.ln();

    // free-run simulation from the first sample
    let mut sim = Vec::with_capacity(y.len());
    sim.push(y[0]);
    for k in 0..y.len() - 1 {
        let prev = sim[k];
        sim.push(a * prev + (1.0 - a) * delayed[k]);
    }
    let err = y.iter().zip(&sim).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let fit_pct = 100.0 * (1.0 - err / spread);
    Ok(FirstOrderFit { time_constant, dead_time, fit_pct })
}

/// Least-squares `k_t` in `f = k_t Ω²` from `(Ω [rad/s], f [N])` samples.
pub fn fit_quadratic_thrust(samples: &[(f64, f64)]) -> Result<f64, SysidError> {
    if samples.len() < 3 {
        return Err(SysidError::Degenerate(format!("{} samples, at least 3 needed", samples.len())));
    }
    let mut speeds: Vec<f64> = samples.iter().map(|s| s.0).collect();
    speeds.sort_by(f64::total_cmp);
    speeds.dedup();
    if speeds.len() < 2 {
        return Err(SysidError::Degenerate("rotor speeds are not distinct".into()));
    }
    let (num, den) = samples.iter().fold((0.0, 0.0), |(n, d), &(w, f)| {
        let w2 = w * w;
        (n + f * w2, d + w2 * w2)
    });
    if !(den > 0.0) || !den.is_finite() {
        return Err(SysidError::Degenerate("all rotor speeds are zero".into()));
    }
    Ok(num / den)
}
