//! Servo-aware nonlinear MPC for tiltable-rotor quadrotors.
//!
//! The crate contains the vehicle model, wrench allocation, reference
//! generation, a real-time-iteration SQP solver, the altitude integral
//! compensator, a closed-loop simulator and actuator identification tools.

pub mod alloc;
pub mod compensator;
pub mod model;
pub mod nmpc;
pub mod refgen;
pub mod sim;
pub mod sysid;
