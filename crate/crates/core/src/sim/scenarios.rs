//! Canned scenarios.

use nalgebra::{DVector, Vector3};

use super::{CompensatorConfig, DisturbanceEvent, PlantOptions, ReferenceSource, Scenario};
use crate::model::{RobotParams, State};
use crate::nmpc::{OcpConfig, OcpWeights};
use crate::alloc::{build_allocation, AllocError};
use crate::refgen::{build_figure8, trajectory_window, Figure8, PoseTarget};

/// Hover pose used as the starting point of most scenarios.
pub const HOVER_POSITION: [f64; 3] = [0.0, 0.0, 1.0];

fn base(name: &str, reference: ReferenceSource, duration: f64, initial: State) -> Scenario {
    Scenario {
        name: name.to_string(),
        params: RobotParams::default(),
        nmpc: OcpConfig::default(),
        weights: OcpWeights::default(),
        compensator: CompensatorConfig::default(),
        reference,
        duration,
        plant_step: 0.005,
        control_period: 0.01,
        plant: PlantOptions::default(),
        noise: None,
        seed: 0,
        disturbances: Vec::new(),
        z_force_bias: 0.0,
        initial,
        initial_thrust: None,
    }
}

fn level(position: [f64; 3]) -> PoseTarget {
    PoseTarget::from_rpy(Vector3::from(position), 0.0, 0.0, 0.0)
}

pub fn hover(duration: f64) -> Scenario {
    hover_at(HOVER_POSITION, duration)
}

pub fn hover_at(position: [f64; 3], duration: f64) -> Scenario {
    let start = State::hover(Vector3::from(position), 4);
    base("hover", ReferenceSource::Setpoints(vec![(0.0, level(position))]), duration, start)
}

/// Position step at t = 0 to `[0.3, 0.6, 1.0]`, then an attitude step at
/// t = 2 s to roll 30°, pitch 60°, yaw 90°, starting from hover at the
/// origin. The plant adds first-order thrust lag (no spin-up dead time) and
/// the integral term is off.
pub fn step_pose() -> Scenario {
    let rpy = [30f64.to_radians(), 60f64.to_radians(), 90f64.to_radians()];
    step_pose_with([0.3, 0.6, 1.0], rpy, 2.0, 8.0)
}

/// Level position step to `position` at t = 0, attitude step to `rpy` (rad)
/// at `switch_time`.
pub fn step_pose_with(position: [f64; 3], rpy: [f64; 3], switch_time: f64, duration: f64) -> Scenario {
    let attitude = PoseTarget::from_rpy(Vector3::from(position), rpy[0], rpy[1], rpy[2]);
    let reference = ReferenceSource::Setpoints(vec![(0.0, level(position)), (switch_time, attitude)]);
    let mut s = base("step_pose", reference, duration, State::hover(Vector3::zeros(), 4));
    s.plant = PlantOptions { thrust_model: true, dead_time: false };
    s.compensator.enabled = false;
    s
}

/// Three pose targets held for 8 s each, ending back at the start.
pub fn setpoints() -> Scenario {
    let a = PoseTarget::from_rpy(Vector3::new(0.3, 0.2, 1.2), 0.5, 0.0, 0.3);
    let b = PoseTarget::from_rpy(Vector3::new(-0.3, 0.0, 1.0), 0.5, 0.5, -0.3);
    setpoints_from(vec![(0.0, a), (8.0, b), (16.0, level(HOVER_POSITION))], 24.0)
}

/// Pose sequence starting from hover at [`HOVER_POSITION`].
pub fn setpoints_from(list: Vec<(f64, PoseTarget)>, duration: f64) -> Scenario {
    base("setpoints", ReferenceSource::Setpoints(list), duration, State::hover(Vector3::from(HOVER_POSITION), 4))
}

/// Climb from rest at the origin to z = 0.6 m with a constant extra
/// upward force standing in for ground-effect lift.
pub fn takeoff(lift_bias: f64) -> Scenario {
    let target = [0.0, 0.0, 0.6];
    let mut s = base("takeoff", ReferenceSource::Setpoints(vec![(0.0, level(target))]), 10.0, State::hover(Vector3::zeros(), 4));
    s.z_force_bias = lift_bias;
    s
}

/// One lap of the figure-eight; `speed` 1 gives T = 20 s, 2 gives T = 10 s.
pub fn figure8(speed: u32) -> Scenario {
    assert!(speed >= 1, "speed factor must be at least 1");
    let mut s = figure8_with_period(20.0 / speed as f64);
    s.name = format!("figure8_{speed}x");
    s
}

/// One lap of period `period`, starting on the trajectory with the reference
/// velocity, body rate and allocated actuator values.
pub fn figure8_with_period(period: f64) -> Scenario {
    let traj = build_figure8(period);
    let (initial, thrust) = trajectory_start(&traj, &RobotParams::default()).expect("default layout has full rank");
    let mut s = base("figure8", ReferenceSource::Figure8(traj), period, initial);
    s.initial_thrust = Some(thrust);
    // a matched plant: no actuator dynamics beyond the modelled servo lag
    s.plant = PlantOptions { thrust_model: false, dead_time: false };
    s.compensator.enabled = false;
    s
}

/// State and rotor thrusts on `traj` at t = 0 (reference pose, velocity,
/// body rate and allocated actuator values).
pub fn trajectory_start(traj: &Figure8, params: &RobotParams) -> Result<(State, DVector<f64>), AllocError> {
    let map = build_allocation(params)?;
    let start = trajectory_window(traj, 0.0, params, &map, 1, 0.1);
    Ok((start.states[0].clone(), start.inputs[0].thrust.clone()))
}

/// Hover with a 3 N, 0.3 s lateral force pulse at t = 1 s.
pub fn disturbance_pulse() -> Scenario {
    let mut s = hover(4.0);
    s.name = "disturbance_pulse".into();
    s.disturbances.push(DisturbanceEvent { start: 1.0, duration: 0.3, force: [3.0, 0.0, 0.0], torque: [0.0; 3] });
    s
}
