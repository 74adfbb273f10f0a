use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};

use super::quat::{quat_mul, quat_norm, quat_to_rot, rot_partials, skew, Quat};
use super::state::{idx, Disturbance, Input, State, StateDerivative, Wrench};
use super::{ModelError, RobotParams};

/// Tolerance on `| |q| - 1 |` accepted by the checked derivative functions.
pub const QUAT_NORM_TOL: f64 = 1e-6;

/// Unit thrust direction of rotor `i` in the body frame for tilt `angle`:
/// `R_Z(γ) R_X(α) e_z`.
fn thrust_axis(azimuth: f64, angle: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (sg, cg) = azimuth.sin_cos();
    let (sa, ca) = angle.sin_cos();
    let n = Vector3::new(sg * sa, -cg * sa, ca);
    let dn = Vector3::new(sg * ca, -cg * ca, -sa);
    (n, dn)
}

/// Resultant body wrench of all rotors. Gyroscopic torque of the spinning
/// propellers is neglected.
pub fn rotor_wrench(angles: &[f64], thrusts: &[f64], params: &RobotParams) -> Wrench {
    assert_eq!(angles.len(), params.rotor_count());
    assert_eq!(thrusts.len(), params.rotor_count());
    let mut w = Wrench::default();
    for ((rotor, &a), &f) in params.rotors.iter().zip(angles).zip(thrusts) {
        let (n, _) = thrust_axis(rotor.azimuth, a);
        let force = n * f;
        w.force += force;
        w.torque += -rotor.spin * params.torque_ratio * force + rotor.position.cross(&force);
    }
    w
}

/// Partial derivatives of [`rotor_wrench`]: 6×N blocks with respect to the
/// tilt angles and to the thrusts. Rows are `[force; torque]`.
pub fn rotor_wrench_partials(
    angles: &[f64],
    thrusts: &[f64],
    params: &RobotParams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n_rot = params.rotor_count();
    let mut d_angle = DMatrix::zeros(6, n_rot);
    let mut d_thrust = DMatrix::zeros(6, n_rot);
    for (i, rotor) in params.rotors.iter().enumerate() {
        let (n, dn) = thrust_axis(rotor.azimuth, angles[i]);
        let torque_of = |v: Vector3<f64>| -rotor.spin * params.torque_ratio * v + rotor.position.cross(&v);
        let fa = dn * thrusts[i];
        d_angle.fixed_view_mut::<3, 1>(0, i).copy_from(&fa);
        d_angle.fixed_view_mut::<3, 1>(3, i).copy_from(&torque_of(fa));
        d_thrust.fixed_view_mut::<3, 1>(0, i).copy_from(&n);
        d_thrust.fixed_view_mut::<3, 1>(3, i).copy_from(&torque_of(n));
    }
    (d_angle, d_thrust)
}

fn inertia(params: &RobotParams) -> Matrix3<f64> {
    Matrix3::from_diagonal(&params.inertia)
}

/// Rigid-body right-hand side for `y = [p, v, q, ω]` under a body wrench.
pub(crate) fn rigid_body_rhs(
    params: &RobotParams,
    y: &[f64],
    wrench: &Wrench,
    dist: &Disturbance,
    out: &mut [f64],
) {
    let v = Vector3::new(y[idx::VEL], y[idx::VEL + 1], y[idx::VEL + 2]);
    let q = Quat::new(y[idx::QUAT], y[idx::QUAT + 1], y[idx::QUAT + 2], y[idx::QUAT + 3]);
    let w = Vector3::new(y[idx::RATE], y[idx::RATE + 1], y[idx::RATE + 2]);

    let acc = (quat_to_rot(&q) * wrench.force + dist.force) / params.mass
        - Vector3::new(0.0, 0.0, params.gravity);
    let q_dot = quat_mul(&q, &Quat::new(0.0, w.x, w.y, w.z)) * 0.5;
    let i_w = params.inertia.component_mul(&w);
    let w_dot = (-w.cross(&i_w) + wrench.torque + dist.torque).component_div(&params.inertia);

    out[idx::POS..idx::POS + 3].copy_from_slice(v.as_slice());
    out[idx::VEL..idx::VEL + 3].copy_from_slice(acc.as_slice());
    out[idx::QUAT..idx::QUAT + 4].copy_from_slice(&[q_dot.w, q_dot.i, q_dot.j, q_dot.k]);
    out[idx::RATE..idx::RATE + 3].copy_from_slice(w_dot.as_slice());
}

pub(crate) type RigidJacobian = SMatrix<f64, 13, 13>;

/// Rigid-body right-hand side with its Jacobians.
///
/// Returns `(ẏ, ∂ẏ/∂y, ∂ẏ/∂a)` where `a = [angles; thrusts]` are the
/// effective actuator values driving the wrench.
pub(crate) fn rigid_body_jacobians(
    params: &RobotParams,
    y: &[f64],
    angles: &[f64],
    thrusts: &[f64],
    dist: &Disturbance,
) -> ([f64; 13], RigidJacobian, DMatrix<f64>) {
    let n_rot = params.rotor_count();
    let wrench = rotor_wrench(angles, thrusts, params);
    let mut f = [0.0; 13];
    rigid_body_rhs(params, y, &wrench, dist, &mut f);

    let q = Quat::new(y[idx::QUAT], y[idx::QUAT + 1], y[idx::QUAT + 2], y[idx::QUAT + 3]);
    let w = Vector3::new(y[idx::RATE], y[idx::RATE + 1], y[idx::RATE + 2]);
    let rot = quat_to_rot(&q);
    let inv_m = 1.0 / params.mass;

    let mut jy = RigidJacobian::zeros();
    // ṗ = v
    for k in 0..3 {
        jy[(idx::POS + k, idx::VEL + k)] = 1.0;
    }
    // v̇ wrt q
    for (c, part) in rot_partials(&q).iter().enumerate() {
        let col = part * wrench.force * inv_m;
        jy.fixed_view_mut::<3, 1>(idx::VEL, idx::QUAT + c).copy_from(&col);
    }
    // q̇ = ½ q ∘ [0, ω]
    let half = 0.5;
    let dq_dq = nalgebra::Matrix4::new(
        0.0, -w.x, -w.y, -w.z, //
        w.x, 0.0, w.z, -w.y, //
        w.y, -w.z, 0.0, w.x, //
        w.z, w.y, -w.x, 0.0,
    ) * half;
    jy.fixed_view_mut::<4, 4>(idx::QUAT, idx::QUAT).copy_from(&dq_dq);
    let qv = Vector3::new(q.i, q.j, q.k);
    let mut dq_dw = SMatrix::<f64, 4, 3>::zeros();
    dq_dw.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-qv.transpose()));
    dq_dw.fixed_view_mut::<3, 3>(1, 0).copy_from(&(Matrix3::identity() * q.w + skew(&qv)));
    jy.fixed_view_mut::<4, 3>(idx::QUAT, idx::RATE).copy_from(&(dq_dw * half));
    // ω̇ wrt ω
    let i_mat = inertia(params);
    let i_inv = Matrix3::from_diagonal(&params.inertia.map(|v| 1.0 / v));
    let i_w = i_mat * w;
    let dw_dw = i_inv * (-skew(&w) * i_mat + skew(&i_w));
    jy.fixed_view_mut::<3, 3>(idx::RATE, idx::RATE).copy_from(&dw_dw);

    let (d_angle, d_thrust) = rotor_wrench_partials(angles, thrusts, params);
    let mut ja = DMatrix::zeros(13, 2 * n_rot);
    for (offset, block) in [(0, &d_angle), (n_rot, &d_thrust)] {
        for i in 0..n_rot {
            let df = Vector3::new(block[(0, i)], block[(1, i)], block[(2, i)]);
            let dt = Vector3::new(block[(3, i)], block[(4, i)], block[(5, i)]);
            ja.fixed_view_mut::<3, 1>(idx::VEL, offset + i).copy_from(&(rot * df * inv_m));
            ja.fixed_view_mut::<3, 1>(idx::RATE, offset + i).copy_from(&(i_inv * dt));
        }
    }
    (f, jy, ja)
}

fn check_state(x: &State, u: &Input, params: &RobotParams) -> Result<(), ModelError> {
    let n = params.rotor_count();
    if x.servo.len() != n || u.thrust.len() != n || u.servo.len() != n {
        return Err(ModelError::Dimension { expected: n, got: x.servo.len().max(u.thrust.len()) });
    }
    let norm = quat_norm(&x.attitude);
    if (norm - 1.0).abs() > QUAT_NORM_TOL {
        return Err(ModelError::NonUnitQuaternion(norm));
    }
    Ok(())
}

fn assemble(
    params: &RobotParams,
    x: &State,
    thrusts: &[f64],
    servo_rate: DVector<f64>,
    d: &Disturbance,
) -> StateDerivative {
    let wrench = rotor_wrench(x.servo.as_slice(), thrusts, params);
    let mut y = [0.0; 13];
    x.write_into_rigid(&mut y);
    let mut out = [0.0; 13];
    rigid_body_rhs(params, &y, &wrench, d, &mut out);
    StateDerivative {
        position: Vector3::new(out[0], out[1], out[2]),
        velocity: Vector3::new(out[3], out[4], out[5]),
        attitude: Quat::new(out[6], out[7], out[8], out[9]),
        body_rate: Vector3::new(out[10], out[11], out[12]),
        servo: servo_rate,
    }
}

impl State {
    pub(crate) fn write_into_rigid(&self, y: &mut [f64]) {
        y[idx::POS..idx::POS + 3].copy_from_slice(self.position.as_slice());
        y[idx::VEL..idx::VEL + 3].copy_from_slice(self.velocity.as_slice());
        let q = &self.attitude;
        y[idx::QUAT..idx::QUAT + 4].copy_from_slice(&[q.w, q.i, q.j, q.k]);
        y[idx::RATE..idx::RATE + 3].copy_from_slice(self.body_rate.as_slice());
    }
}

fn servo_rate(x: &State, u: &Input, params: &RobotParams) -> DVector<f64> {
    (&u.servo - &x.servo) / params.servo_time_constant
}

/// Continuous control-model dynamics. Thrust commands act instantly; servo
/// angles follow their commands as first-order lags.
pub fn control_deriv(
    x: &State,
    u: &Input,
    d: &Disturbance,
    params: &RobotParams,
) -> Result<StateDerivative, ModelError> {
    check_state(x, u, params)?;
    Ok(assemble(params, x, u.thrust.as_slice(), servo_rate(x, u, params), d))
}

/// Per-rotor spin-up delay. A rotor command issued while the rotor is
/// stopped is held back for the dead time; once the last held command is
/// released, commands pass straight through again.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeadTimeQueue {
    pending: Vec<VecDeque<(f64, f64)>>,
}

impl DeadTimeQueue {
    pub fn new(rotor_count: usize) -> Self {
        Self { pending: vec![VecDeque::new(); rotor_count] }
    }

    pub fn is_idle(&self) -> bool {
        self.pending.iter().all(|q| q.is_empty())
    }

    /// Registers a new command at time `now`.
    pub fn push(&mut self, now: f64, command: &[f64], actual: &[f64], dead_time: f64) {
        for (i, q) in self.pending.iter_mut().enumerate() {
            if !q.is_empty() || (actual[i] <= 0.0 && command[i] > 0.0) {
                debug_assert!(q.back().is_none_or(|&(t, _)| t <= now + dead_time));
                q.push_back((now + dead_time, command[i]));
            }
        }
    }

    /// Drops entries superseded by later released ones.
    pub fn advance(&mut self, now: f64) {
        for q in &mut self.pending {
            if q.back().is_some_and(|&(t, _)| t <= now) {
                q.clear();
                continue;
            }
            while q.len() >= 2 && q[1].0 <= now {
                q.pop_front();
            }
        }
    }

    /// Thrust command seen by rotor `i` at time `now`.
    pub fn effective(&self, i: usize, now: f64, commanded: f64) -> f64 {
        let q = &self.pending[i];
        if q.is_empty() {
            return commanded;
        }
        q.iter().rev().find(|&&(t, _)| t <= now).map_or(0.0, |&(_, c)| c)
    }

    pub fn release_times(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.pending[i].iter().map(|&(t, _)| t)
    }
}

/// Simulated vehicle state: the control-model state plus, when the thrust
/// lag is simulated, the actual rotor thrusts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub state: State,
    pub thrust: Option<DVector<f64>>,
    pub dead_time: Option<DeadTimeQueue>,
}

impl PlantState {
    pub fn ideal(state: State) -> Self {
        Self { state, thrust: None, dead_time: None }
    }

    pub fn with_thrust(state: State, thrust: DVector<f64>, dead_time: bool) -> Self {
        let n = thrust.len();
        Self { state, thrust: Some(thrust), dead_time: dead_time.then(|| DeadTimeQueue::new(n)) }
    }

    /// Notifies the plant of a new command (feeds the dead-time queue).
    pub fn command(&mut self, u: &Input, now: f64, params: &RobotParams) {
        if let (Some(q), Some(f)) = (self.dead_time.as_mut(), self.thrust.as_ref()) {
            q.advance(now);
            q.push(now, u.thrust.as_slice(), f.as_slice(), params.thrust_dead_time);
        }
    }

    pub fn dim(&self) -> usize {
        self.state.dim() + self.thrust.as_ref().map_or(0, |f| f.len())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        self.state.write_into(x.as_mut_slice());
        if let Some(f) = &self.thrust {
            let off = self.state.dim();
            x.rows_mut(off, f.len()).copy_from(f);
        }
        x
    }

    /// Overwrites the continuous part from a flat vector.
    pub fn set_from_vector(&mut self, x: &DVector<f64>) {
        let n = self.state.rotor_count();
        self.state = State::from_slice(x.as_slice(), n);
        if let Some(f) = self.thrust.as_mut() {
            f.copy_from(&x.rows(idx::RIGID + n, n));
        }
    }

    /// Thrust actually produced right now.
    pub fn produced_thrust(&self, commanded: &DVector<f64>) -> DVector<f64> {
        self.thrust.clone().unwrap_or_else(|| commanded.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantDerivative {
    pub state: StateDerivative,
    pub thrust: Option<DVector<f64>>,
}

impl PlantDerivative {
    pub fn to_vector(&self) -> DVector<f64> {
        let s = self.state.to_vector();
        match &self.thrust {
            None => s,
            Some(f) => {
                let mut out = DVector::zeros(s.len() + f.len());
                out.rows_mut(0, s.len()).copy_from(&s);
                out.rows_mut(s.len(), f.len()).copy_from(f);
                out
            }
        }
    }
}

/// Plant dynamics. Identical to [`control_deriv`] unless the plant carries
/// thrust states, in which case the wrench uses the actual thrusts and those
/// follow the (possibly dead-time delayed) commands as first-order lags.
pub fn plant_deriv(
    x: &PlantState,
    u: &Input,
    d: &Disturbance,
    params: &RobotParams,
    now: f64,
) -> Result<PlantDerivative, ModelError> {
    check_state(&x.state, u, params)?;
    let servo = servo_rate(&x.state, u, params);
    match &x.thrust {
        None => Ok(PlantDerivative {
            state: assemble(params, &x.state, u.thrust.as_slice(), servo, d),
            thrust: None,
        }),
        Some(f) => {
            let f_dot = DVector::from_fn(f.len(), |i, _| {
                let cmd = x.dead_time.as_ref().map_or(u.thrust[i], |q| q.effective(i, now, u.thrust[i]));
                (cmd - f[i]) / params.thrust_time_constant
            });
            Ok(PlantDerivative {
                state: assemble(params, &x.state, f.as_slice(), servo, d),
                thrust: Some(f_dot),
            })
        }
    }
}
