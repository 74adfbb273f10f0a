use nalgebra::{DVector, Vector3};

use super::quat::{quat_from_slice, quat_normalize, Quat};
use super::RobotParams;

/// Offsets into the flat state vector `[p, v, q, ω, α, (f)]`.
pub mod idx {
    pub const POS: usize = 0;
    pub const VEL: usize = 3;
    pub const QUAT: usize = 6;
    pub const RATE: usize = 10;
    pub const SERVO: usize = 13;
    /// Size of the rigid-body block `[p, v, q, ω]`.
    pub const RIGID: usize = 13;
}

/// Control-model state.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// World ENU position (m).
    pub position: Vector3<f64>,
    /// World velocity (m/s).
    pub velocity: Vector3<f64>,
    /// Body-to-world attitude.
    pub attitude: Quat,
    /// Body angular velocity (rad/s).
    pub body_rate: Vector3<f64>,
    /// Servo tilt angles (rad).
    pub servo: DVector<f64>,
}

impl State {
    /// At rest at `position`, level, rotors upright.
    pub fn hover(position: Vector3<f64>, rotor_count: usize) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Quat::identity(),
            body_rate: Vector3::zeros(),
            servo: DVector::zeros(rotor_count),
        }
    }

    pub fn rotor_count(&self) -> usize {
        self.servo.len()
    }

    pub fn dim(&self) -> usize {
        idx::RIGID + self.servo.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        self.write_into(x.as_mut_slice());
        x
    }

    pub(crate) fn write_into(&self, x: &mut [f64]) {
        x[idx::POS..idx::POS + 3].copy_from_slice(self.position.as_slice());
        x[idx::VEL..idx::VEL + 3].copy_from_slice(self.velocity.as_slice());
        let q = &self.attitude;
        x[idx::QUAT..idx::QUAT + 4].copy_from_slice(&[q.w, q.i, q.j, q.k]);
        x[idx::RATE..idx::RATE + 3].copy_from_slice(self.body_rate.as_slice());
        let n = self.servo.len();
        x[idx::SERVO..idx::SERVO + n].copy_from_slice(self.servo.as_slice());
    }

    /// Reads the first `13 + n_rotors` entries of a flat state vector.
    pub fn from_slice(x: &[f64], rotor_count: usize) -> Self {
        Self {
            position: Vector3::from_column_slice(&x[idx::POS..idx::POS + 3]),
            velocity: Vector3::from_column_slice(&x[idx::VEL..idx::VEL + 3]),
            attitude: quat_from_slice(&x[idx::QUAT..idx::QUAT + 4]),
            body_rate: Vector3::from_column_slice(&x[idx::RATE..idx::RATE + 3]),
            servo: DVector::from_column_slice(&x[idx::SERVO..idx::SERVO + rotor_count]),
        }
    }

    pub fn normalized(mut self) -> Self {
        self.attitude = quat_normalize(&self.attitude);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Actuator commands: per-rotor thrust (N) and servo angle (rad).
#[derive(Debug, Clone, PartialEq)]
pub struct Input {
    pub thrust: DVector<f64>,
    pub servo: DVector<f64>,
}

impl Input {
    pub fn new(thrust: DVector<f64>, servo: DVector<f64>) -> Self {
        assert_eq!(thrust.len(), servo.len(), "thrust and servo command lengths differ");
        Self { thrust, servo }
    }

    /// Equal thrust split carrying the weight, rotors upright.
    pub fn hover(params: &RobotParams) -> Self {
        let n = params.rotor_count();
        Self::new(DVector::from_element(n, params.hover_thrust()), DVector::zeros(n))
    }

    pub fn rotor_count(&self) -> usize {
        self.thrust.len()
    }

    /// Flat `[f_c, α_c]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.thrust.len();
        let mut u = DVector::zeros(2 * n);
        u.rows_mut(0, n).copy_from(&self.thrust);
        u.rows_mut(n, n).copy_from(&self.servo);
        u
    }

    pub fn from_slice(u: &[f64]) -> Self {
        let n = u.len() / 2;
        Self::new(DVector::from_column_slice(&u[..n]), DVector::from_column_slice(&u[n..2 * n]))
    }

    pub fn within_bounds(&self, params: &RobotParams) -> bool {
        self.thrust.iter().all(|&f| f >= params.thrust_min && f <= params.thrust_max)
            && self.servo.iter().all(|&a| a >= params.servo_min && a <= params.servo_max)
    }

    pub fn clamped(&self, params: &RobotParams) -> Self {
        Self::new(
            self.thrust.map(|f| f.clamp(params.thrust_min, params.thrust_max)),
            self.servo.map(|a| a.clamp(params.servo_min, params.servo_max)),
        )
    }
}

/// Body-frame force and torque.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|v| v.is_finite())
    }
}

/// External disturbance: force in the world frame, torque in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbance {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Disturbance {
    pub fn force_z(fz: f64) -> Self {
        Self { force: Vector3::new(0.0, 0.0, fz), torque: Vector3::zeros() }
    }
}

/// Time derivative of a [`State`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Quat,
    pub body_rate: Vector3<f64>,
    pub servo: DVector<f64>,
}

impl StateDerivative {
    pub fn to_vector(&self) -> DVector<f64> {
        State {
            position: self.position,
            velocity: self.velocity,
            attitude: self.attitude,
            body_rate: self.body_rate,
            servo: self.servo.clone(),
        }
        .to_vector()
    }
}
