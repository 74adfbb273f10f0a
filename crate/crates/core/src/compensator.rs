//! Altitude integral term feeding the NMPC disturbance force.
//!
//! Trapezoidal integration with back-calculation anti-windup. The output is
//! a world-frame Z force the prediction model treats as a disturbance, so the
//! caller feeds `e = ẑ - z_r`: a vehicle sagging below its reference ends up
//! with a negative `f_dz`, and the controller adds thrust to cancel it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ITermState {
    /// Accumulated error integral (m·s).
    pub accumulator: f64,
    /// N/(m·s)
    pub gain: f64,
    /// s
    pub sample_time: f64,
    pub out_min: f64,
    pub out_max: f64,
    pub prev_error: f64,
}

impl ITermState {
    pub fn new(gain: f64, sample_time: f64, limit: f64) -> Self {
        assert!(gain > 0.0 && sample_time > 0.0 && limit >= 0.0);
        Self { accumulator: 0.0, gain, sample_time, out_min: -limit, out_max: limit, prev_error: 0.0 }
    }

    pub fn output(&self) -> f64 {
        (self.gain * self.accumulator).clamp(self.out_min, self.out_max)
    }
}

impl Default for ITermState {
    fn default() -> Self {
        Self::new(5.0, 0.01, 5.0)
    }
}

/// Advances the integrator by one sample of error `e` and returns the
/// clamped force `f_dz` (N) with the new state.
pub fn iterm_update(state: &ITermState, e: f64) -> (f64, ITermState) {
    let mut s = *state;
    let integral = s.accumulator + 0.5 * s.sample_time * (s.prev_error + e);
    let raw = s.gain * integral;
    let out = raw.clamp(s.out_min, s.out_max);
    s.accumulator = integral + (out - raw) / s.gain;
    s.prev_error = e;
    (out, s)
}

pub fn iterm_reset(state: &ITermState) -> ITermState {
    ITermState { accumulator: 0.0, prev_error: 0.0, ..*state }
}
