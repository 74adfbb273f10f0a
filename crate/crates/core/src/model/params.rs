use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// One tiltable rotor mounted at the end of an arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rotor {
    /// Rotor hub position in the body frame (m).
    pub position: Vector3<f64>,
    /// Rotation about body Z from the body frame to the arm-end frame (rad).
    /// The arm-end X axis points outward along the arm; the servo tilts the
    /// rotor about this axis.
    pub azimuth: f64,
    /// Spin direction `d_i`, +1 or -1.
    pub spin: f64,
}

/// Physical parameters of the vehicle and its actuators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// kg
    pub mass: f64,
    /// Diagonal of the inertia matrix (kg·m²).
    pub inertia: Vector3<f64>,
    /// Magnitude of gravity (m/s²); the gravity vector is `[0, 0, -g]`.
    pub gravity: f64,
    pub rotors: Vec<Rotor>,
    /// Quadratic rotor coefficient `k_t` with `f = k_t Ω²` (N·s²).
    pub thrust_coeff: f64,
    /// Drag-torque to thrust ratio `k_q / k_t` (m).
    pub torque_ratio: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub servo_min: f64,
    pub servo_max: f64,
    /// First-order servo time constant (s).
    pub servo_time_constant: f64,
    /// First-order thrust time constant (s).
    pub thrust_time_constant: f64,
    /// Rotor spin-up dead time from standstill (s).
    pub thrust_dead_time: f64,
}

impl RobotParams {
    /// X-configuration with arms at 45°, 135°, 225°, 315°.
    pub fn x_layout(arm_length: f64, spins: [f64; 4]) -> Vec<Rotor> {
        // exact diagonal offsets keep the layout symmetric to the last bit
        let c = arm_length * std::f64::consts::FRAC_1_SQRT_2;
        [(45.0f64, c, c), (135.0, -c, c), (225.0, -c, -c), (315.0, c, -c)]
            .iter()
            .zip(spins)
            .map(|(&(deg, x, y), spin)| Rotor { position: Vector3::new(x, y, 0.0), azimuth: deg.to_radians(), spin })
            .collect()
    }

    pub fn rotor_count(&self) -> usize {
        self.rotors.len()
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity / self.rotor_count() as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidParams(msg.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if self.inertia.iter().any(|&i| !(i > 0.0)) {
            return bad("inertia diagonal must be positive");
        }
        if !(self.gravity > 0.0) {
            return bad("gravity must be positive");
        }
        if self.rotors.len() < 3 {
            return bad("at least three rotors are required");
        }
        if self.rotors.iter().any(|r| r.spin != 1.0 && r.spin != -1.0) {
            return bad("rotor spin direction must be +1 or -1");
        }
        if !(self.thrust_min >= 0.0 && self.thrust_min < self.thrust_max) {
            return bad("thrust bounds must satisfy 0 <= min < max");
        }
        if !(self.servo_min < self.servo_max) {
            return bad("servo bounds must satisfy min < max");
        }
        if !(self.servo_time_constant > 0.0) {
            return bad("servo time constant must be positive");
        }
        if !(self.thrust_time_constant > 0.0) {
            return bad("thrust time constant must be positive");
        }
        if !(self.thrust_dead_time >= 0.0) {
            return bad("thrust dead time must be non-negative");
        }
        if !(self.thrust_coeff > 0.0) {
            return bad("thrust coefficient must be positive");
        }
        Ok(())
    }
}

impl Default for RobotParams {
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        Self {
            mass: 2.773,
            inertia: Vector3::new(0.0417, 0.0395, 0.0707),
            gravity: 9.81,
            rotors: Self::x_layout(0.2, [-1.0, 1.0, -1.0, 1.0]),
            thrust_coeff: 1.5e-5,
            torque_ratio: 0.0153,
            thrust_min: 0.0,
            thrust_max: 30.0,
            servo_min: -FRAC_PI_2,
            servo_max: FRAC_PI_2,
            servo_time_constant: 0.0859,
            thrust_time_constant: 0.0942,
            thrust_dead_time: 0.35,
        }
    }
}
