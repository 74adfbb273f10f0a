//! Nonlinear MPC as a multiple-shooting least-squares OCP, solved by one
//! Gauss-Newton SQP iteration per control tick (real-time iteration).
//!
//! Per tick: linearize the dynamics and residuals around the warm start,
//! condense the state increments away, solve the dense box QP over the input
//! increments and take the full step.

mod discretize;
pub mod qp;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::quat::{quat_conj, right_mul_matrix};
use crate::model::{idx, Disturbance, Input, RobotParams, State};
use crate::refgen::ReferenceWindow;

pub use discretize::{linearize_dynamics, PredictionModel};
pub(crate) use discretize::discretize;
use qp::{solve_box_qp, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmpcError {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Diagonal state weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateWeights {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// On the vector part of the attitude error quaternion.
    pub attitude: [f64; 3],
    pub body_rate: [f64; 3],
    /// Same weight for every servo angle.
    pub servo: f64,
}

impl Default for StateWeights {
    fn default() -> Self {
        Self {
            position: [300.0, 300.0, 400.0],
            velocity: [10.0; 3],
            attitude: [300.0, 300.0, 600.0],
            body_rate: [5.0; 3],
            servo: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpWeights {
    pub stage: StateWeights,
    pub terminal: StateWeights,
    /// On `f_c - f_r`.
    pub thrust: f64,
    /// On `α_c - α`, the command relative to the current servo angle.
    pub servo_command: f64,
}

impl Default for OcpWeights {
    fn default() -> Self {
        Self { stage: StateWeights::default(), terminal: StateWeights::default(), thrust: 2.0, servo_command: 250.0 }
    }
}

impl OcpWeights {
    pub fn validate(&self) -> Result<(), NmpcError> {
        for (name, w) in [("stage", &self.stage), ("terminal", &self.terminal)] {
            let blocks: [(&str, &[f64]); 5] = [
                ("position", &w.position),
                ("velocity", &w.velocity),
                ("attitude", &w.attitude),
                ("body_rate", &w.body_rate),
                ("servo", std::slice::from_ref(&w.servo)),
            ];
            for (b, vals) in blocks {
                if vals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(NmpcError::InvalidWeights(format!("{name}.{b} has a negative or non-finite entry")));
                }
                if !vals.iter().any(|&v| v > 0.0) {
                    return Err(NmpcError::InvalidWeights(format!("{name}.{b} needs a positive entry")));
                }
            }
        }
        if !(self.thrust > 0.0) || !(self.servo_command > 0.0) {
            return Err(NmpcError::InvalidWeights("input weights must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpConfig {
    pub horizon: usize,
    /// Shooting interval (s).
    pub t_integ: f64,
    /// Per-axis soft bound on world velocity (m/s).
    pub v_limit: f64,
    /// Per-axis soft bound on body rate (rad/s).
    pub omega_limit: f64,
    /// Penalty weight on soft-bound violations.
    pub soft_weight: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub model: PredictionModel,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            t_integ: 0.1,
            v_limit: 1.0,
            omega_limit: 6.0,
            soft_weight: 1e4,
            qp_tol: 1e-8,
            qp_max_iter: 200,
            model: PredictionModel::Servo,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), NmpcError> {
        let bad = |m: &str| Err(NmpcError::InvalidConfig(m.into()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.t_integ > 0.0) {
            return bad("t_integ must be positive");
        }
        if !(self.v_limit >= 0.0) || !(self.omega_limit >= 0.0) {
            return bad("soft bounds must be non-negative");
        }
        if !(self.soft_weight >= 0.0) || !(self.qp_tol > 0.0) || self.qp_max_iter == 0 {
            return bad("soft weight, QP tolerance and iteration cap must be positive");
        }
        Ok(())
    }
}

/// Flat trajectory guess: `N + 1` model states and `N` inputs `[f_c; α_c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl WarmStart {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn state(&self, k: usize, rotor_count: usize) -> State {
        State::from_slice(self.states[k].as_slice(), rotor_count)
    }

    pub fn input(&self, k: usize) -> Input {
        Input::from_slice(self.inputs[k].as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Ok,
    QpMaxIter,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    /// Least-squares cost of the updated trajectory.
    pub cost: f64,
    /// QP objective at the returned step (the zero step scores 0).
    pub qp_objective: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub u_now: Input,
    pub predicted: Vec<State>,
    pub warm: WarmStart,
    pub stats: SolveStats,
    pub status: SolveStatus,
}

/// Weighted residual of one stage: `[√Q ⊙ x̄; √R ⊙ ū]` with
/// `x̄ = [p - p_r, v - v_r, V(q ∘ q_r⁻¹), ω - ω_r, α - α_r]` and
/// `ū = [f_c - f_r, α_c - α]`.
pub fn stage_residual(x: &State, u: &Input, x_r: &State, u_r: &Input, weights: &OcpWeights) -> DVector<f64> {
    let n = x.rotor_count();
    let e_q = crate::model::quat::quat_error_vec(&x.attitude, &x_r.attitude);
    let w = &weights.stage;
    let mut r = Vec::with_capacity(12 + 3 * n);
    for i in 0..3 {
        r.push(w.position[i].sqrt() * (x.position[i] - x_r.position[i]));
    }
    for i in 0..3 {
        r.push(w.velocity[i].sqrt() * (x.velocity[i] - x_r.velocity[i]));
    }
    for i in 0..3 {
        r.push(w.attitude[i].sqrt() * e_q[i]);
    }
    for i in 0..3 {
        r.push(w.body_rate[i].sqrt() * (x.body_rate[i] - x_r.body_rate[i]));
    }
    for i in 0..n {
        r.push(w.servo.sqrt() * (x.servo[i] - x_r.servo[i]));
    }
    for i in 0..n {
        r.push(weights.thrust.sqrt() * (u.thrust[i] - u_r.thrust[i]));
    }
    for i in 0..n {
        r.push(weights.servo_command.sqrt() * (u.servo[i] - x.servo[i]));
    }
    DVector::from_vec(r)
}

/// Linearized residual `r + Cx δx + Cu δu` of one stage.
struct StageLsq {
    r: DVector<f64>,
    cx: DMatrix<f64>,
    cu: Option<DMatrix<f64>>,
}

struct Problem<'a> {
    cfg: &'a OcpConfig,
    weights: &'a OcpWeights,
    n: usize,
    nx: usize,
    nu: usize,
}

impl Problem<'_> {
    fn stage_lsq(&self, x: &DVector<f64>, u: Option<&DVector<f64>>, x_r: &State, u_r: Option<&Input>) -> StageLsq {
        let (n, nx, nu) = (self.n, self.nx, self.nu);
        let w = if u.is_some() { &self.weights.stage } else { &self.weights.terminal };
        let rows = 12 + n + if u.is_some() { 2 * n } else { 0 } + 6;
        let mut r = DVector::zeros(rows);
        let mut cx = DMatrix::zeros(rows, nx);
        let mut cu = u.map(|_| DMatrix::zeros(rows, nu));

        let diag = |r: &mut DVector<f64>, cx: &mut DMatrix<f64>, row: usize, col: usize, wt: f64, target: f64| {
            let s = wt.sqrt();
            r[row] = s * (x[col] - target);
            cx[(row, col)] = s;
        };
        for i in 0..3 {
            diag(&mut r, &mut cx, i, idx::POS + i, w.position[i], x_r.position[i]);
            diag(&mut r, &mut cx, 3 + i, idx::VEL + i, w.velocity[i], x_r.velocity[i]);
            diag(&mut r, &mut cx, 9 + i, idx::RATE + i, w.body_rate[i], x_r.body_rate[i]);
        }
        // e = q ∘ q_r⁻¹ is linear in q; its sign is frozen at the linearization point
        let m = right_mul_matrix(&quat_conj(&x_r.attitude));
        let q = nalgebra::Vector4::new(x[idx::QUAT], x[idx::QUAT + 1], x[idx::QUAT + 2], x[idx::QUAT + 3]);
        let e = m * q;
        let sign = if e[0] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..3 {
            let s = sign * w.attitude[i].sqrt();
            r[6 + i] = s * e[1 + i];
            for c in 0..4 {
                cx[(6 + i, idx::QUAT + c)] = s * m[(1 + i, c)];
            }
        }
        for i in 0..n {
            diag(&mut r, &mut cx, 12 + i, idx::SERVO + i, w.servo, x_r.servo[i]);
        }
        let mut row = 12 + n;
        if let (Some(u), Some(u_r), Some(cu)) = (u, u_r, cu.as_mut()) {
            let sf = self.weights.thrust.sqrt();
            // without a servo model there is no servo equation to penalize
            let sa = if self.cfg.model == PredictionModel::NoServo { 0.0 } else { self.weights.servo_command.sqrt() };
            for i in 0..n {
                r[row + i] = sf * (u[i] - u_r.thrust[i]);
                cu[(row + i, i)] = sf;
                r[row + n + i] = sa * (u[n + i] - x[idx::SERVO + i]);
                cu[(row + n + i, n + i)] = sa;
                cx[(row + n + i, idx::SERVO + i)] = -sa;
            }
            row += 2 * n;
        }
        // soft bounds, active set frozen at the linearization point
        let sw = self.cfg.soft_weight.sqrt();
        for (off, lim) in [(idx::VEL, self.cfg.v_limit), (idx::RATE, self.cfg.omega_limit)] {
            for i in 0..3 {
                let v = x[off + i];
                if v.abs() >= lim && sw > 0.0 {
                    r[row] = sw * (v - v.signum() * lim);
                    cx[(row, off + i)] = sw;
                }
                row += 1;
            }
        }
        StageLsq { r, cx, cu }
    }
}

/// Builds a guess from the measured state and the reference window: the
/// rigid-body part of `x_hat` with the reference attitude blended in along
/// the horizon, and the reference (allocated) inputs.
pub fn cold_start(x_hat: &State, window: &ReferenceWindow, model: PredictionModel) -> WarmStart {
    let horizon = window.horizon();
    let states = (0..=horizon)
        .map(|k| {
            let s = k as f64 / horizon as f64;
            let q_r = window.states[k].attitude;
            let q0 = if x_hat.attitude.coords.dot(&q_r.coords) < 0.0 { -x_hat.attitude } else { x_hat.attitude };
            let q = crate::model::quat::quat_normalize(&(q0 * (1.0 - s) + q_r * s));
            let st = State { attitude: q, ..x_hat.clone() };
            flat_state(&st, model, &window.inputs[k.min(horizon - 1)].thrust)
        })
        .collect();
    let inputs = window.inputs.iter().map(|u| u.to_vector()).collect();
    WarmStart { states, inputs }
}

/// Shifts a solution one stage forward, duplicating the last stage.
pub fn shift_warm_start(warm: &WarmStart) -> WarmStart {
    let mut states: Vec<_> = warm.states[1..].to_vec();
    states.push(warm.states.last().unwrap().clone());
    let mut inputs: Vec<_> = warm.inputs[1..].to_vec();
    inputs.push(warm.inputs.last().unwrap().clone());
    WarmStart { states, inputs }
}

/// Flat model state; `thrust` fills the thrust block when the model has one.
pub fn flat_state(x: &State, model: PredictionModel, thrust: &DVector<f64>) -> DVector<f64> {
    let n = x.rotor_count();
    let mut v = DVector::zeros(model.state_dim(n));
    x.write_into(v.as_mut_slice());
    if model.has_thrust_state() {
        v.rows_mut(idx::RIGID + n, n).copy_from(thrust);
    }
    v
}

pub struct Nmpc {
    pub params: RobotParams,
    pub cfg: OcpConfig,
    pub weights: OcpWeights,
}

impl Nmpc {
    pub fn new(params: RobotParams, cfg: OcpConfig, weights: OcpWeights) -> Result<Self, NmpcError> {
        cfg.validate()?;
        weights.validate()?;
        params.validate().map_err(|e| NmpcError::InvalidConfig(e.to_string()))?;
        Ok(Self { params, cfg, weights })
    }

    fn problem(&self) -> Problem<'_> {
        let n = self.params.rotor_count();
        Problem {
            cfg: &self.cfg,
            weights: &self.weights,
            n,
            nx: self.cfg.model.state_dim(n),
            nu: 2 * n,
        }
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.params.rotor_count();
        let p = &self.params;
        let lo = DVector::from_fn(2 * n, |i, _| if i < n { p.thrust_min } else { p.servo_min });
        let hi = DVector::from_fn(2 * n, |i, _| if i < n { p.thrust_max } else { p.servo_max });
        (lo, hi)
    }

    /// Least-squares cost of a trajectory against a window.
    pub fn trajectory_cost(&self, window: &ReferenceWindow, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
        let pb = self.problem();
        let horizon = inputs.len();
        (0..=horizon)
            .map(|k| {
                let lsq = if k < horizon {
                    pb.stage_lsq(&states[k], Some(&inputs[k]), &window.states[k], Some(&window.inputs[k]))
                } else {
                    pb.stage_lsq(&states[k], None, &window.states[k], None)
                };
                0.5 * lsq.r.norm_squared()
            })
            .sum()
    }

    /// One real-time iteration.
    ///
    /// `thrust_hat` is the measured rotor thrust, used only when the
    /// prediction model carries thrust states.
    pub fn solve_rti(
        &self,
        x_hat: &State,
        thrust_hat: Option<&DVector<f64>>,
        window: &ReferenceWindow,
        warm: &WarmStart,
        dist: &Disturbance,
    ) -> Result<SolveResult, NmpcError> {
        let started = Instant::now();
        let pb = self.problem();
        let (n, nx, nu) = (pb.n, pb.nx, pb.nu);
        let horizon = self.cfg.horizon;
        if warm.states.len() != horizon + 1 || warm.inputs.len() != horizon {
            return Err(NmpcError::Dimension(format!(
                "warm start has {} states / {} inputs, horizon is {horizon}",
                warm.states.len(),
                warm.inputs.len()
            )));
        }
        if window.states.len() != horizon + 1 || window.inputs.len() != horizon {
            return Err(NmpcError::Dimension("reference window does not match the horizon".into()));
        }
        if x_hat.rotor_count() != n || warm.states.iter().any(|s| s.len() != nx) || warm.inputs.iter().any(|u| u.len() != nu) {
            return Err(NmpcError::Dimension("state or input size does not match the rotor count".into()));
        }

        let (lo, hi) = self.bounds();
        let mut xs = warm.states.clone();
        let mut us: Vec<DVector<f64>> = warm.inputs.iter().map(|u| u.zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h))).collect();

        let thrust0 = match thrust_hat {
            Some(f) => f.clone(),
            None if self.cfg.model.has_thrust_state() => xs[0].rows(idx::RIGID + n, n).into_owned(),
            None => DVector::zeros(n),
        };
        let mut x0 = flat_state(x_hat, self.cfg.model, &thrust0);
        let q_dot: f64 = (0..4).map(|c| x0[idx::QUAT + c] * xs[0][idx::QUAT + c]).sum();
        if q_dot < 0.0 {
            for c in 0..4 {
                x0[idx::QUAT + c] = -x0[idx::QUAT + c];
            }
        }

        // linearize dynamics and residuals along the guess
        let mut a_mats = Vec::with_capacity(horizon);
        let mut b_mats = Vec::with_capacity(horizon);
        let mut defects = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let d = discretize(self.cfg.model, &self.params, xs[k].as_slice(), us[k].as_slice(), dist, self.cfg.t_integ, true, true);
            let (a, b) = d.jacobians.unwrap();
            defects.push(&d.next - &xs[k + 1]);
            a_mats.push(a);
            b_mats.push(b);
        }
        let lsq: Vec<StageLsq> = (0..=horizon)
            .map(|k| {
                if k < horizon {
                    pb.stage_lsq(&xs[k], Some(&us[k]), &window.states[k], Some(&window.inputs[k]))
                } else {
                    pb.stage_lsq(&xs[k], None, &window.states[k], None)
                }
            })
            .collect();

        let (h, g) = condense(&a_mats, &b_mats, &defects, &lsq, &(&x0 - &xs[0]), nx, nu);
        let lower = DVector::from_fn(horizon * nu, |i, _| lo[i % nu] - us[i / nu][i % nu]);
        let upper = DVector::from_fn(horizon * nu, |i, _| hi[i % nu] - us[i / nu][i % nu]);

        let finite = h.iter().chain(g.iter()).all(|v| v.is_finite());
        let sol = if finite {
            Some(solve_box_qp(&h, &g, &lower, &upper, self.cfg.qp_tol, self.cfg.qp_max_iter))
        } else {
            None
        };

        let mut status = match sol.as_ref().map(|s| s.status) {
            Some(QpStatus::Optimal) => SolveStatus::Ok,
            Some(QpStatus::MaxIterations) => SolveStatus::QpMaxIter,
            _ => SolveStatus::Diverged,
        };

        let (qp_iterations, kkt_residual, qp_objective) =
            sol.as_ref().map_or((0, f64::NAN, f64::NAN), |s| (s.iterations, s.kkt_residual, s.objective));
        if let Some(sol) = sol.as_ref().filter(|_| status != SolveStatus::Diverged) {
            // full Newton step along the linearized dynamics
            let mut dx = &x0 - &xs[0];
            xs[0] = x0.clone();
            for k in 0..horizon {
                let du = sol.z.rows(k * nu, nu);
                us[k] += du;
                for i in 0..nu {
                    us[k][i] = us[k][i].clamp(lo[i], hi[i]);
                }
                dx = &a_mats[k] * dx + &b_mats[k] * du + &defects[k];
                xs[k + 1] += &dx;
                let qn = xs[k + 1].rows(idx::QUAT, 4).norm();
                xs[k + 1].rows_mut(idx::QUAT, 4).unscale_mut(qn);
            }
        }
        let cost = self.trajectory_cost(window, &xs, &us);
        if !cost.is_finite() || xs.iter().chain(us.iter()).any(|v| v.iter().any(|e| !e.is_finite())) {
            status = SolveStatus::Diverged;
        }

        let predicted = xs.iter().map(|x| State::from_slice(x.as_slice(), n)).collect();
        let u_now = Input::from_slice(us[0].as_slice());
        Ok(SolveResult {
            u_now,
            predicted,
            warm: WarmStart { states: xs, inputs: us },
            stats: SolveStats {
                qp_iterations,
                kkt_residual,
                cost,
                qp_objective,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            },
            status,
        })
    }
}

/// Condenses the multiple-shooting QP onto the input increments.
///
/// With `δx_0 = c_0` fixed and `δx_{k+1} = A_k δx_k + B_k δu_k + d_k`,
/// returns the Hessian and gradient (at `δu = 0`) of
/// `½ Σ ‖r_k + Cx_k δx_k + Cu_k δu_k‖²`.
fn condense(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    d: &[DVector<f64>],
    lsq: &[StageLsq],
    c0: &DVector<f64>,
    nx: usize,
    nu: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let horizon = a.len();
    let nz = horizon * nu;
    let w: Vec<DMatrix<f64>> = lsq.iter().map(|s| s.cx.tr_mul(&s.cx)).collect();
    let s: Vec<DMatrix<f64>> = lsq[..horizon].iter().map(|l| l.cx.tr_mul(l.cu.as_ref().unwrap())).collect();
    let r: Vec<DMatrix<f64>> = lsq[..horizon].iter().map(|l| {
        let cu = l.cu.as_ref().unwrap();
        cu.tr_mul(cu)
    }).collect();

    // free response
    let mut c = Vec::with_capacity(horizon + 1);
    c.push(c0.clone());
    for k in 0..horizon {
        let next = &a[k] * &c[k] + &d[k];
        c.push(next);
    }

    let mut g = DVector::zeros(nz);
    let q_of = |k: usize| lsq[k].cx.tr_mul(&(&lsq[k].r + &lsq[k].cx * &c[k]));
    let mut eta = q_of(horizon);
    for i in (0..horizon).rev() {
        let cu = lsq[i].cu.as_ref().unwrap();
        let gi = cu.tr_mul(&(&lsq[i].r + &lsq[i].cx * &c[i])) + b[i].tr_mul(&eta);
        g.rows_mut(i * nu, nu).copy_from(&gi);
        eta = q_of(i) + a[i].tr_mul(&eta);
    }

    let mut h = DMatrix::zeros(nz, nz);
    let mut gs: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nx, nu); horizon + 1];
    for j in 0..horizon {
        // G_k = ∂δx_k/∂δu_j for k > j
        gs[j + 1] = b[j].clone();
        for k in j + 1..horizon {
            gs[k + 1] = &a[k] * &gs[k];
        }
        let mut lambda = &w[horizon] * &gs[horizon];
        for i in (j..horizon).rev() {
            let block = if i == j { &r[j] + b[j].tr_mul(&lambda) } else { s[i].tr_mul(&gs[i]) + b[i].tr_mul(&lambda) };
            h.view_mut((i * nu, j * nu), (nu, nu)).copy_from(&block);
            if i > j {
                h.view_mut((j * nu, i * nu), (nu, nu)).copy_from(&block.transpose());
                lambda = &w[i] * &gs[i] + a[i].tr_mul(&lambda);
            }
        }
    }
    (h, g)
}
