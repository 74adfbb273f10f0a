//! Vehicle model: rotor wrench, rigid-body and actuator dynamics, RK4.

mod dynamics;
mod integrate;
mod params;
pub mod quat;
mod state;

use thiserror::Error;

pub use dynamics::{
    control_deriv, plant_deriv, rotor_wrench, rotor_wrench_partials, DeadTimeQueue, PlantDerivative,
    PlantState, QUAT_NORM_TOL,
};
pub(crate) use dynamics::{rigid_body_jacobians, rigid_body_rhs};
pub use integrate::rk4_step;
pub use params::{RobotParams, Rotor};
pub use state::{idx, Disturbance, Input, State, StateDerivative, Wrench};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid robot parameters: {0}")]
    InvalidParams(String),
    #[error("quaternion norm {0} is not within tolerance of 1")]
    NonUnitQuaternion(f64),
    #[error("dimension mismatch: expected {expected} rotors, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("integration produced a non-finite state")]
    IntegrationFailure,
}
