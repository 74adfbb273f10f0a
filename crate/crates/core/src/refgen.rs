//! Full-state reference windows for the NMPC horizon.
//!
//! Every stage carries a complete state (pose, velocities, body rates and
//! allocated servo angles) and, except the last, an allocated input. The
//! feedforward wrench comes from the translational and rotational dynamics
//! with the gyroscopic term dropped.

use nalgebra::{Vector3, Vector4};

use crate::alloc::{allocate, AllocationMap};
use crate::model::quat::{quat_conj, quat_mul, quat_to_rot, rpy_to_quat, Quat};
use crate::model::{Input, RobotParams, State, Wrench};

/// A fixed pose to hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTarget {
    pub position: Vector3<f64>,
    pub attitude: Quat,
}

impl PoseTarget {
    pub fn new(position: Vector3<f64>, attitude: Quat) -> Self {
        Self { position, attitude }
    }

    pub fn from_rpy(position: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(position, rpy_to_quat(roll, pitch, yaw))
    }
}

/// A value with its first and second time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet3 {
    pub value: Vector3<f64>,
    pub rate: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Parametric pose trajectory with analytic derivatives.
pub trait PoseTrajectory: Send + Sync {
    /// Position (m) and its derivatives at time `t`.
    fn position(&self, t: f64) -> Jet3;
    /// Intrinsic Z-Y-X Euler angles `[roll, pitch, yaw]` (rad) and their
    /// derivatives.
    fn rpy(&self, t: f64) -> Jet3;
}

/// Lemniscate-like pose trajectory with coupled roll, pitch and yaw motion.
///
/// With `w = 2π/T`:
/// `p = [cos wt, sin(2wt)/2, 0.3 sin(2wt + π/2) + 1]`,
/// `roll = -sin(2wt)/2`, `pitch = 0.5 cos wt`, `yaw = π/2 sin(wt + π) + π/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Figure8 {
    pub period: f64,
}

pub fn build_figure8(period: f64) -> Figure8 {
    assert!(period > 0.0, "period must be positive");
    Figure8 { period }
}

impl Figure8 {
    pub fn angular_frequency(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period
    }
}

/// `a sin(k w t + φ) + c` with derivatives.
fn sinusoid(t: f64, w: f64, a: f64, k: f64, phase: f64, c: f64) -> (f64, f64, f64) {
    let kw = k * w;
    let (s, co) = (kw * t + phase).sin_cos();
    (a * s + c, a * kw * co, -a * kw * kw * s)
}

impl PoseTrajectory for Figure8 {
    fn position(&self, t: f64) -> Jet3 {
        use std::f64::consts::FRAC_PI_2;
        let w = self.angular_frequency();
        let x = sinusoid(t, w, 1.0, 1.0, FRAC_PI_2, 0.0);
        let y = sinusoid(t, w, 0.5, 2.0, 0.0, 0.0);
        let z = sinusoid(t, w, 0.3, 2.0, FRAC_PI_2, 1.0);
        Jet3 {
            value: Vector3::new(x.0, y.0, z.0),
            rate: Vector3::new(x.1, y.1, z.1),
            accel: Vector3::new(x.2, y.2, z.2),
        }
    }

    fn rpy(&self, t: f64) -> Jet3 {
        use std::f64::consts::{FRAC_PI_2, PI};
        let w = self.angular_frequency();
        let r = sinusoid(t, w, -0.5, 2.0, 0.0, 0.0);
        let p = sinusoid(t, w, 0.5, 1.0, FRAC_PI_2, 0.0);
        let y = sinusoid(t, w, FRAC_PI_2, 1.0, PI, FRAC_PI_2);
        Jet3 {
            value: Vector3::new(r.0, p.0, y.0),
            rate: Vector3::new(r.1, p.1, y.1),
            accel: Vector3::new(r.2, p.2, y.2),
        }
    }
}

/// Quaternion with first and second derivatives.
#[derive(Debug, Clone, Copy)]
struct QuatJet {
    q: Quat,
    d: Quat,
    dd: Quat,
}

impl QuatJet {
    /// Rotation by `angle(t)` about a fixed unit `axis`.
    fn axis_angle(axis: Vector3<f64>, angle: f64, rate: f64, accel: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        let dir = Quat::new(-s, axis.x * c, axis.y * c, axis.z * c);
        let val = Quat::new(c, axis.x * s, axis.y * s, axis.z * s);
        Self { q: val, d: dir * (0.5 * rate), dd: dir * (0.5 * accel) - val * (0.25 * rate * rate) }
    }

    fn mul(&self, o: &Self) -> Self {
        Self {
            q: quat_mul(&self.q, &o.q),
            d: quat_mul(&self.d, &o.q) + quat_mul(&self.q, &o.d),
            dd: quat_mul(&self.dd, &o.q) + quat_mul(&self.d, &o.d) * 2.0 + quat_mul(&self.q, &o.dd),
        }
    }
}

/// Attitude, body rate and body angular acceleration from Euler angles and
/// their derivatives: `ω = 2 V(q⁻¹ ∘ q̇)`, `ω̇ = 2 V(q⁻¹ ∘ q̈)`.
pub fn attitude_kinematics(rpy: &Jet3) -> (Quat, Vector3<f64>, Vector3<f64>) {
    let qz = QuatJet::axis_angle(Vector3::z(), rpy.value.z, rpy.rate.z, rpy.accel.z);
    let qy = QuatJet::axis_angle(Vector3::y(), rpy.value.y, rpy.rate.y, rpy.accel.y);
    let qx = QuatJet::axis_angle(Vector3::x(), rpy.value.x, rpy.rate.x, rpy.accel.x);
    let jet = qz.mul(&qy).mul(&qx);
    let inv = quat_conj(&jet.q);
    let w = quat_mul(&inv, &jet.d) * 2.0;
    let w_dot = quat_mul(&inv, &jet.dd) * 2.0;
    (jet.q, Vector3::new(w.i, w.j, w.k), Vector3::new(w_dot.i, w_dot.j, w_dot.k))
}

/// Feedforward quantities stored alongside each reference stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedforward {
    /// World acceleration (m/s²).
    pub accel: Vector3<f64>,
    /// Body angular acceleration (rad/s²).
    pub ang_accel: Vector3<f64>,
    /// Desired body wrench.
    pub wrench: Wrench,
}

/// References for one horizon: `N + 1` states and `N` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceWindow {
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
    pub feedforward: Vec<Feedforward>,
    /// Whether allocation had to clamp stage `k`.
    pub saturated: Vec<bool>,
}

impl ReferenceWindow {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

struct StageRef {
    position: Jet3,
    attitude: Quat,
    body_rate: Vector3<f64>,
    ang_accel: Vector3<f64>,
}

fn build_window(stages: Vec<StageRef>, params: &RobotParams, map: &AllocationMap) -> ReferenceWindow {
    let horizon = stages.len() - 1;
    let g = Vector3::new(0.0, 0.0, params.gravity);
    let mut window = ReferenceWindow {
        states: Vec::with_capacity(stages.len()),
        inputs: Vec::with_capacity(horizon),
        feedforward: Vec::with_capacity(stages.len()),
        saturated: Vec::with_capacity(stages.len()),
    };
    let mut prev_q: Option<Quat> = None;
    for (k, s) in stages.into_iter().enumerate() {
        // keep consecutive references on the same hemisphere
        let q = match prev_q {
            Some(p) if Vector4::from(p.coords).dot(&Vector4::from(s.attitude.coords)) < 0.0 => -s.attitude,
            _ => s.attitude,
        };
        prev_q = Some(q);
        let force = quat_to_rot(&q).transpose() * ((s.position.accel + g) * params.mass);
        let torque = params.inertia.component_mul(&s.ang_accel);
        let wrench = Wrench::new(force, torque);
        let alloc = allocate(map, &wrench);
        window.states.push(State {
            position: s.position.value,
            velocity: s.position.rate,
            attitude: q,
            body_rate: s.body_rate,
            servo: alloc.angle.clone(),
        });
        if k < horizon {
            window.inputs.push(Input::new(alloc.thrust.clone(), alloc.angle.clone()));
        }
        window.feedforward.push(Feedforward { accel: s.position.accel, ang_accel: s.ang_accel, wrench });
        window.saturated.push(alloc.saturated);
    }
    window
}

/// Holds `target` over the whole horizon with zero rates.
pub fn setpoint_window(
    target: &PoseTarget,
    params: &RobotParams,
    map: &AllocationMap,
    horizon: usize,
    _dt: f64,
) -> ReferenceWindow {
    let stages = (0..=horizon)
        .map(|_| StageRef {
            position: Jet3 { value: target.position, rate: Vector3::zeros(), accel: Vector3::zeros() },
            attitude: target.attitude,
            body_rate: Vector3::zeros(),
            ang_accel: Vector3::zeros(),
        })
        .collect();
    build_window(stages, params, map)
}

/// Samples `traj` at `t_now + k·dt` for `k = 0..=horizon`.
pub fn trajectory_window(
    traj: &dyn PoseTrajectory,
    t_now: f64,
    params: &RobotParams,
    map: &AllocationMap,
    horizon: usize,
    dt: f64,
) -> ReferenceWindow {
    let stages = (0..=horizon)
        .map(|k| {
            let t = t_now + k as f64 * dt;
            let (attitude, body_rate, ang_accel) = attitude_kinematics(&traj.rpy(t));
            StageRef { position: traj.position(t), attitude, body_rate, ang_accel }
        })
        .collect();
    build_window(stages, params, map)
}

/// Reference pose of a trajectory at one instant.
pub fn trajectory_pose(traj: &dyn PoseTrajectory, t: f64) -> PoseTarget {
    let r = traj.rpy(t).value;
    PoseTarget::from_rpy(traj.position(t).value, r.x, r.y, r.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::build_allocation;
    use crate::model::{control_deriv, rotor_wrench, Disturbance};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    struct Constant(PoseTarget, Vector3<f64>);
    impl PoseTrajectory for Constant {
        fn position(&self, _t: f64) -> Jet3 {
            Jet3 { value: self.0.position, rate: Vector3::zeros(), accel: Vector3::zeros() }
        }
        fn rpy(&self, _t: f64) -> Jet3 {
            Jet3 { value: self.1, rate: Vector3::zeros(), accel: Vector3::zeros() }
        }
    }

    struct YawSpin(f64);
    impl PoseTrajectory for YawSpin {
        fn position(&self, _t: f64) -> Jet3 {
            Jet3 { value: Vector3::new(0.0, 0.0, 1.0), rate: Vector3::zeros(), accel: Vector3::zeros() }
        }
        fn rpy(&self, t: f64) -> Jet3 {
            Jet3 { value: Vector3::new(0.0, 0.0, self.0 * t), rate: Vector3::new(0.0, 0.0, self.0), accel: Vector3::zeros() }
        }
    }

    fn setup() -> (RobotParams, AllocationMap) {
        let p = RobotParams::default();
        let m = build_allocation(&p).unwrap();
        (p, m)
    }

    /// Euler-rate to body-rate map for Z-Y-X angles.
    fn euler_body_rate(rpy: &Jet3) -> Vector3<f64> {
        let (r, p) = (rpy.value.x, rpy.value.y);
        let d = rpy.rate;
        Vector3::new(
            d.x - d.z * p.sin(),
            d.y * r.cos() + d.z * p.cos() * r.sin(),
            -d.y * r.sin() + d.z * p.cos() * r.cos(),
        )
    }

    #[test]
    fn level_setpoint_is_hover() {
        let (p, m) = setup();
        let w = setpoint_window(&PoseTarget::new(Vector3::new(3.0, -1.0, 2.0), Quat::identity()), &p, &m, 20, 0.1);
        assert_eq!(w.states.len(), 21);
        assert_eq!(w.inputs.len(), 20);
        for u in &w.inputs {
            for i in 0..4 {
                assert_relative_eq!(u.thrust[i], p.hover_thrust(), epsilon = 1e-9);
                assert_relative_eq!(u.servo[i], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tilted_setpoint_preserves_lift_magnitude() {
        let (p, m) = setup();
        let target = PoseTarget::from_rpy(Vector3::new(-0.3, 0.0, 1.0), 0.5, 0.5, -0.3);
        let w = setpoint_window(&target, &p, &m, 5, 0.1);
        let f = w.feedforward[0].wrench.force;
        assert_relative_eq!(f.norm(), p.mass * p.gravity, epsilon = 1e-12);
        assert_relative_eq!(quat_to_rot(&target.attitude) * f, Vector3::new(0.0, 0.0, p.mass * p.gravity), epsilon = 1e-12);
    }

    #[test]
    fn constant_trajectory_equals_setpoint() {
        let (p, m) = setup();
        let rpy = Vector3::new(0.2, -0.1, 0.7);
        let target = PoseTarget::from_rpy(Vector3::new(1.0, 2.0, 3.0), rpy.x, rpy.y, rpy.z);
        let a = setpoint_window(&target, &p, &m, 10, 0.1);
        let b = trajectory_window(&Constant(target, rpy), 4.0, &p, &m, 10, 0.1);
        for k in 0..=10 {
            assert!((a.states[k].to_vector() - b.states[k].to_vector()).amax() <= 1e-15);
            assert_eq!(a.saturated[k], b.saturated[k]);
        }
        for k in 0..10 {
            assert!((a.inputs[k].to_vector() - b.inputs[k].to_vector()).amax() <= 1e-12);
        }
    }

    #[test]
    fn yaw_spin_body_rate() {
        let (w, dw) = {
            let j = YawSpin(0.8).rpy(1.3);
            let (_, w, dw) = attitude_kinematics(&j);
            (w, dw)
        };
        assert_relative_eq!(w, Vector3::new(0.0, 0.0, 0.8), epsilon = 1e-15);
        assert_relative_eq!(dw, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn figure8_initial_sample() {
        let f = build_figure8(20.0);
        assert_relative_eq!(f.angular_frequency(), PI / 10.0);
        let p = f.position(0.0).value;
        assert_relative_eq!(p, Vector3::new(1.0, 0.0, 1.3), epsilon = 1e-15);
        let r = f.rpy(0.0).value;
        assert_relative_eq!(r, Vector3::new(0.0, 0.5, FRAC_PI_2), epsilon = 1e-15);
    }

    #[test]
    fn figure8_altitude_range() {
        let f = build_figure8(20.0);
        let zs: Vec<f64> = (0..2000).map(|k| f.position(k as f64 * 0.01).value.z).collect();
        let lo = zs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(lo, 0.7, epsilon = 1e-6);
        assert_relative_eq!(hi, 1.3, epsilon = 1e-6);
    }

    #[test]
    fn figure8_derivatives_match_central_differences() {
        let f = build_figure8(20.0);
        let h = 1e-5;
        for k in 0..100 {
            let t = 0.37 * k as f64;
            for jet in [|f: &Figure8, t| f.position(t), |f: &Figure8, t| f.rpy(t)] {
                let c = jet(&f, t);
                let (p, m) = (jet(&f, t + h), jet(&f, t - h));
                let fd_rate = (p.value - m.value) / (2.0 * h);
                let fd_acc = (p.rate - m.rate) / (2.0 * h);
                for i in 0..3 {
                    let scale = c.rate[i].abs().max(1e-2);
                    assert!((fd_rate[i] - c.rate[i]).abs() / scale <= 1e-4);
                    let scale = c.accel[i].abs().max(1e-2);
                    assert!((fd_acc[i] - c.accel[i]).abs() / scale <= 1e-4);
                }
            }
        }
    }

    #[test]
    fn body_rates_match_euler_rate_map_and_differences() {
        let f = build_figure8(10.0);
        let h = 1e-5;
        for k in 0..50 {
            let t = 0.21 * k as f64;
            let j = f.rpy(t);
            let (_, w, dw) = attitude_kinematics(&j);
            assert_relative_eq!(w, euler_body_rate(&j), epsilon = 1e-12);
            let fd = (euler_body_rate(&f.rpy(t + h)) - euler_body_rate(&f.rpy(t - h))) / (2.0 * h);
            assert_relative_eq!(dw, fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn window_velocity_consistent_with_positions() {
        let (p, m) = setup();
        let f = build_figure8(20.0);
        let dt = 0.01;
        let w = trajectory_window(&f, 3.0, &p, &m, 20, dt);
        for k in 1..20 {
            let fd = (w.states[k + 1].position - w.states[k - 1].position) / (2.0 * dt);
            assert!((fd - w.states[k].velocity).norm() <= 1e-3 * dt * dt * 1e3);
        }
    }

    #[test]
    fn allocation_embedding_reproduces_wrench() {
        let (p, m) = setup();
        let f = build_figure8(10.0);
        let w = trajectory_window(&f, 1.7, &p, &m, 20, 0.1);
        for k in 0..20 {
            assert!(!w.saturated[k]);
            let u = &w.inputs[k];
            let got = rotor_wrench(u.servo.as_slice(), u.thrust.as_slice(), &p);
            let want = w.feedforward[k].wrench;
            assert!((got.force - want.force).norm() <= 1e-8);
            assert!((got.torque - want.torque).norm() <= 1e-8);
            assert_eq!(w.states[k].servo, u.servo);
        }
    }

    #[test]
    fn hover_reference_is_dynamically_consistent() {
        let (p, m) = setup();
        let target = PoseTarget::from_rpy(Vector3::new(0.0, 0.0, 1.0), 0.3, -0.2, 1.0);
        let w = setpoint_window(&target, &p, &m, 3, 0.1);
        let d = control_deriv(&w.states[0], &w.inputs[0], &Disturbance::default(), &p).unwrap();
        assert_relative_eq!(d.position, Vector3::zeros(), epsilon = 1e-9);
        assert_relative_eq!(d.velocity, Vector3::zeros(), epsilon = 1e-9);
        assert_relative_eq!(d.body_rate, Vector3::zeros(), epsilon = 1e-9);
        assert_relative_eq!(d.attitude.coords, Quat::new(0.0, 0.0, 0.0, 0.0).coords, epsilon = 1e-9);
    }
}
