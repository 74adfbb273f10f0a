//! Discrete prediction model and its sensitivities.
//!
//! Over one shooting interval the actuator states follow their first-order
//! lags in closed form (exact for a held command); the rigid body is
//! integrated with one RK4 step driven by the actuator values at the stage
//! times. Sensitivities are propagated forward through the four stages.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::quat::{quat_from_slice, quat_norm};
use crate::model::{
    idx, rigid_body_jacobians, rigid_body_rhs, rotor_wrench, Disturbance, Input, ModelError, RobotParams, State,
};

/// Actuator dynamics included in the prediction model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictionModel {
    /// Servo angles equal their commands instantly; thrust is instant.
    #[serde(rename = "no_servo_no_thrust")]
    NoServo,
    /// First-order servo lag; thrust is instant.
    #[serde(rename = "servo_only")]
    Servo,
    /// First-order servo and thrust lags.
    #[serde(rename = "servo_and_thrust")]
    ServoThrust,
}

impl PredictionModel {
    pub fn has_thrust_state(self) -> bool {
        self == PredictionModel::ServoThrust
    }

    /// Flat state dimension for `n` rotors.
    pub fn state_dim(self, n: usize) -> usize {
        idx::RIGID + n + if self.has_thrust_state() { n } else { 0 }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        [PredictionModel::NoServo, PredictionModel::Servo, PredictionModel::ServoThrust].into_iter().find(|m| m.label() == label)
    }

    pub fn label(self) -> &'static str {
        match self {
            PredictionModel::NoServo => "no_servo_no_thrust",
            PredictionModel::Servo => "servo_only",
            PredictionModel::ServoThrust => "servo_and_thrust",
        }
    }
}

pub(crate) struct Discrete {
    pub next: DVector<f64>,
    /// `∂x_next/∂x` and `∂x_next/∂u`; present when requested.
    pub jacobians: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Actuator values `[angles; thrusts]` at offset `s` into the interval, with
/// their derivatives with respect to `(x, u)`.
fn actuators(
    model: PredictionModel,
    params: &RobotParams,
    x: &[f64],
    u: &[f64],
    s: f64,
    want_jac: bool,
) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let n = params.rotor_count();
    let nx = model.state_dim(n);
    let mut a = vec![0.0; 2 * n];
    let mut da = want_jac.then(|| DMatrix::zeros(2 * n, nx + 2 * n));
    let e_servo = (-s / params.servo_time_constant).exp();
    let e_thrust = (-s / params.thrust_time_constant).exp();
    for i in 0..n {
        let (ac, fc) = (u[n + i], u[i]);
        if model == PredictionModel::NoServo {
            a[i] = ac;
            if let Some(d) = da.as_mut() {
                d[(i, nx + n + i)] = 1.0;
            }
        } else {
            let a0 = x[idx::SERVO + i];
            a[i] = ac + (a0 - ac) * e_servo;
            if let Some(d) = da.as_mut() {
                d[(i, idx::SERVO + i)] = e_servo;
                d[(i, nx + n + i)] = 1.0 - e_servo;
            }
        }
        if model.has_thrust_state() {
            let f0 = x[idx::SERVO + n + i];
            a[n + i] = fc + (f0 - fc) * e_thrust;
            if let Some(d) = da.as_mut() {
                d[(n + i, idx::SERVO + n + i)] = e_thrust;
                d[(n + i, nx + i)] = 1.0 - e_thrust;
            }
        } else {
            a[n + i] = fc;
            if let Some(d) = da.as_mut() {
                d[(n + i, nx + i)] = 1.0;
            }
        }
    }
    (a, da)
}

/// One interval of length `h` from flat state `x` under held input `u`.
pub(crate) fn discretize(
    model: PredictionModel,
    params: &RobotParams,
    x: &[f64],
    u: &[f64],
    dist: &Disturbance,
    h: f64,
    want_jac: bool,
    normalize: bool,
) -> Discrete {
    let n = params.rotor_count();
    let nx = model.state_dim(n);
    let nz = nx + 2 * n;
    const R: usize = idx::RIGID;

    let stage_acts: Vec<_> = [0.0, 0.5 * h, h].iter().map(|&s| actuators(model, params, x, u, s, want_jac)).collect();
    let pick = [0usize, 1, 1, 2];
    let weights = [1.0, 2.0, 2.0, 1.0];
    let offsets = [0.0, 0.5 * h, 0.5 * h, h];

    let mut y_next = [0.0; R];
    y_next.copy_from_slice(&x[..R]);
    let mut dy_next = want_jac.then(|| {
        let mut m = DMatrix::zeros(R, nz);
        m.view_mut((0, 0), (R, R)).fill_with_identity();
        m
    });

    let mut y_stage = [0.0; R];
    y_stage.copy_from_slice(&x[..R]);
    let mut dy_stage = dy_next.clone();
    for s in 0..4 {
        let (a, da) = &stage_acts[pick[s]];
        let (k, dk) = if want_jac {
            let (f, jy, ja) = rigid_body_jacobians(params, &y_stage, &a[..n], &a[n..], dist);
            let dy = dy_stage.as_ref().unwrap();
            let dk = DMatrix::from_fn(R, R, |r, c| jy[(r, c)]) * dy + ja * da.as_ref().unwrap();
            (f, Some(dk))
        } else {
            let w = rotor_wrench(&a[..n], &a[n..], params);
            let mut f = [0.0; R];
            rigid_body_rhs(params, &y_stage, &w, dist, &mut f);
            (f, None)
        };
        for r in 0..R {
            y_next[r] += h / 6.0 * weights[s] * k[r];
        }
        if let (Some(dn), Some(dk)) = (dy_next.as_mut(), dk.as_ref()) {
            *dn += dk * (h / 6.0 * weights[s]);
        }
        if s < 3 {
            let step = offsets[s + 1];
            for r in 0..R {
                y_stage[r] = x[r] + step * k[r];
            }
            if let Some(dk) = dk.as_ref() {
                let mut d = DMatrix::zeros(R, nz);
                d.view_mut((0, 0), (R, R)).fill_with_identity();
                d += dk * step;
                dy_stage = Some(d);
            }
        }
    }

    let mut next = DVector::zeros(nx);
    next.rows_mut(0, R).copy_from_slice(&y_next);
    if normalize {
        let qn = quat_norm(&quat_from_slice(&y_next[idx::QUAT..idx::QUAT + 4]));
        for v in next.rows_mut(idx::QUAT, 4).iter_mut() {
            *v /= qn;
        }
    }
    let (a_end, da_end) = &stage_acts[2];
    next.rows_mut(R, n).copy_from_slice(&a_end[..n]);
    if model.has_thrust_state() {
        next.rows_mut(R + n, n).copy_from_slice(&a_end[n..]);
    }

    let jacobians = dy_next.map(|dy| {
        let da = da_end.as_ref().unwrap();
        let mut full = DMatrix::zeros(nx, nz);
        full.view_mut((0, 0), (R, nz)).copy_from(&dy);
        full.view_mut((R, 0), (n, nz)).copy_from(&da.rows(0, n));
        if model.has_thrust_state() {
            full.view_mut((R + n, 0), (n, nz)).copy_from(&da.rows(n, n));
        }
        (full.columns(0, nx).into_owned(), full.columns(nx, 2 * n).into_owned())
    });
    Discrete { next, jacobians }
}

/// Servo-model transition over `t_integ` with its sensitivities
/// `A = ∂x_next/∂x` and `B = ∂x_next/∂u` (`u = [f_c; α_c]`). The returned
/// attitude is renormalized and the sensitivities include that step.
pub fn linearize_dynamics(
    x: &State,
    u: &Input,
    dist: &Disturbance,
    params: &RobotParams,
    t_integ: f64,
) -> Result<(State, DMatrix<f64>, DMatrix<f64>), ModelError> {
    let n = params.rotor_count();
    if x.rotor_count() != n || u.rotor_count() != n {
        return Err(ModelError::Dimension { expected: n, got: x.rotor_count().max(u.rotor_count()) });
    }
    let d = discretize(
        PredictionModel::Servo,
        params,
        x.to_vector().as_slice(),
        u.to_vector().as_slice(),
        dist,
        t_integ,
        true,
        false,
    );
    let (mut a, mut b) = d.jacobians.unwrap();
    // chain rule through q ↦ q/‖q‖
    let mut next = d.next;
    let q = next.rows(idx::QUAT, 4).into_owned();
    let qn = q.norm();
    let proj = (DMatrix::identity(4, 4) - &q * q.transpose() / (qn * qn)) / qn;
    let qa = &proj * a.rows(idx::QUAT, 4);
    a.rows_mut(idx::QUAT, 4).copy_from(&qa);
    let qb = &proj * b.rows(idx::QUAT, 4);
    b.rows_mut(idx::QUAT, 4).copy_from(&qb);
    next.rows_mut(idx::QUAT, 4).unscale_mut(qn);
    if next.iter().chain(a.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(ModelError::IntegrationFailure);
    }
    Ok((State::from_slice(next.as_slice(), n), a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::quat::{quat_normalize, rpy_to_quat, Quat};
    use crate::model::control_deriv;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, model: PredictionModel, p: &RobotParams) -> (DVector<f64>, DVector<f64>) {
        let n = p.rotor_count();
        let q = rpy_to_quat(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-3.0..3.0));
        let x = State {
            position: Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
            velocity: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            attitude: q,
            body_rate: Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
            servo: DVector::from_fn(n, |_, _| rng.random_range(-1.2..1.2)),
        };
        let thrust = DVector::from_fn(n, |_, _| rng.random_range(2.0..12.0));
        let u = DVector::from_fn(2 * n, |i, _| if i < n { rng.random_range(2.0..12.0) } else { rng.random_range(-1.2..1.2) });
        (crate::nmpc::flat_state(&x, model, &thrust), u)
    }

    #[test]
    fn sensitivities_match_central_differences() {
        let p = RobotParams::default();
        let d = Disturbance { force: Vector3::new(0.3, -0.2, 1.0), torque: Vector3::new(0.01, 0.0, -0.02) };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-6;
        for model in [PredictionModel::NoServo, PredictionModel::Servo, PredictionModel::ServoThrust] {
            for _ in 0..100 {
                let (x, u) = random_point(&mut rng, model, &p);
                let (a, b) = discretize(model, &p, x.as_slice(), u.as_slice(), &d, 0.1, true, false).jacobians.unwrap();
                let eval = |x: &DVector<f64>, u: &DVector<f64>| {
                    discretize(model, &p, x.as_slice(), u.as_slice(), &d, 0.1, false, false).next
                };
                let check = |col: DVector<f64>, fd: DVector<f64>| {
                    for r in 0..col.len() {
                        let err = (col[r] - fd[r]).abs();
                        let scale = col[r].abs().max(1e-2);
                        assert!(err / scale <= 1e-5, "{model:?} row {r}: {} vs {}", col[r], fd[r]);
                    }
                };
                for c in 0..x.len() {
                    let mut xp = x.clone();
                    xp[c] += step;
                    let mut xm = x.clone();
                    xm[c] -= step;
                    check(a.column(c).into_owned(), (eval(&xp, &u) - eval(&xm, &u)) / (2.0 * step));
                }
                for c in 0..u.len() {
                    let mut up = u.clone();
                    up[c] += step;
                    let mut um = u.clone();
                    um[c] -= step;
                    check(b.column(c).into_owned(), (eval(&x, &up) - eval(&x, &um)) / (2.0 * step));
                }
            }
        }
    }

    #[test]
    fn servo_block_is_discrete_first_order_map() {
        let p = RobotParams::default();
        let x = State::hover(Vector3::zeros(), 4);
        let (_, a, b) = linearize_dynamics(&x, &Input::hover(&p), &Disturbance::default(), &p, 0.1).unwrap();
        let gain = 1.0 - (-0.1f64 / p.servo_time_constant).exp();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { gain } else { 0.0 };
                assert!((b[(idx::SERVO + i, 4 + j)] - want).abs() <= 2e-3);
                assert!((a[(idx::SERVO + i, idx::SERVO + j)] - if i == j { 1.0 - gain } else { 0.0 }).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn position_rows_show_double_integrator() {
        let p = RobotParams::default();
        let x = State::hover(Vector3::new(1.0, 2.0, 3.0), 4);
        let (next, a, _) = linearize_dynamics(&x, &Input::hover(&p), &Disturbance::default(), &p, 0.1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.1 } else { 0.0 };
                assert!((a[(idx::POS + i, idx::VEL + j)] - want).abs() <= 1e-9);
            }
        }
        assert!((next.position - x.position).norm() <= 1e-12);
    }

    #[test]
    fn no_servo_model_ignores_servo_state() {
        let p = RobotParams::default();
        let mut x = State::hover(Vector3::zeros(), 4);
        x.servo = DVector::from_element(4, 0.4);
        let u = Input::hover(&p).to_vector();
        let d = discretize(PredictionModel::NoServo, &p, x.to_vector().as_slice(), u.as_slice(), &Disturbance::default(), 0.1, true, true);
        assert!(d.next.rows(idx::SERVO, 4).iter().all(|&v| v == 0.0));
        assert!(d.next.rows(0, idx::RIGID).iter().zip(x.to_vector().iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let (a, _) = d.jacobians.unwrap();
        assert!(a.columns(idx::SERVO, 4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rigid_part_agrees_with_fine_integration_of_control_model() {
        // a held command over one interval: compare against many small RK4
        // steps of the continuous model
        let p = RobotParams::default();
        let mut x = State::hover(Vector3::zeros(), 4);
        x.attitude = quat_normalize(&Quat::new(0.99, 0.05, -0.08, 0.1));
        x.body_rate = Vector3::new(0.5, -0.3, 0.8);
        x.servo = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let u = Input::new(DVector::from_vec(vec![6.0, 7.5, 6.5, 7.0]), DVector::from_vec(vec![0.5, -0.4, 0.0, 0.2]));
        let coarse = discretize(PredictionModel::Servo, &p, x.to_vector().as_slice(), u.to_vector().as_slice(), &Disturbance::default(), 0.1, false, true).next;
        let mut fine = x.to_vector();
        for _ in 0..1000 {
            fine = crate::model::rk4_step(&fine, 1e-4, Some(idx::QUAT), |_, v| {
                control_deriv(&State::from_slice(v.as_slice(), 4), &u, &Disturbance::default(), &p).unwrap().to_vector()
            })
            .unwrap();
        }
        assert!((coarse - fine).amax() <= 2e-3);
    }
}
