//! Deterministic closed-loop simulation.
//!
//! The plant is integrated at a fixed step under a zero-order-held input;
//! every `control_period` the controller samples the (optionally noisy)
//! state, updates the altitude integral term, builds the reference window
//! and runs one RTI solve.

mod ablation;
mod io;
mod metrics;
pub mod scenarios;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::{build_allocation, AllocError};
use crate::compensator::{iterm_update, ITermState};
use crate::model::quat::{quat_mul, quat_normalize, Quat};
use crate::model::{idx, plant_deriv, rk4_step, Disturbance, Input, PlantState, RobotParams, State};
use crate::nmpc::{cold_start, Nmpc, NmpcError, OcpConfig, OcpWeights, SolveStatus, WarmStart};
use crate::refgen::{setpoint_window, trajectory_pose, trajectory_window, Figure8, PoseTarget, ReferenceWindow};

pub use ablation::{ablation_compare, lag_sensitivity, AblationReport, LagSensitivity, VariantReport, VARIANTS};
pub use io::{log_header, write_log_csv, write_metrics_json, write_timing_csv, LOG_COLUMNS};
pub use metrics::{max_thrust_command_step, metrics, percentile, rpy_error, servo_command_variation, Metrics};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Solver(#[from] NmpcError),
    #[error(transparent)]
    Allocation(#[from] AllocError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Standard deviations of the measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// m
    pub position: f64,
    /// m/s
    pub velocity: f64,
    /// rad, applied as a body-frame rotation vector
    pub attitude: f64,
    /// rad/s
    pub body_rate: f64,
    /// rad
    pub servo: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { position: 0.002, velocity: 0.005, attitude: 0.001, body_rate: 0.01, servo: 0.001 }
    }
}

/// Rectangular wrench pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEvent {
    pub start: f64,
    pub duration: f64,
    /// World frame (N).
    pub force: [f64; 3],
    /// Body frame (N·m).
    #[serde(default)]
    pub torque: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSource {
    /// Pose targets with their switch times; the first must start at 0.
    Setpoints(Vec<(f64, PoseTarget)>),
    Figure8(Figure8),
}

impl ReferenceSource {
    pub fn pose_at(&self, t: f64) -> PoseTarget {
        match self {
            ReferenceSource::Setpoints(list) => {
                list.iter().rev().find(|(ts, _)| *ts <= t).unwrap_or(&list[0]).1
            }
            ReferenceSource::Figure8(f) => trajectory_pose(f, t),
        }
    }

    fn window(&self, t: f64, params: &RobotParams, map: &crate::alloc::AllocationMap, cfg: &OcpConfig) -> ReferenceWindow {
        match self {
            ReferenceSource::Setpoints(_) => setpoint_window(&self.pose_at(t), params, map, cfg.horizon, cfg.t_integ),
            ReferenceSource::Figure8(f) => trajectory_window(f, t, params, map, cfg.horizon, cfg.t_integ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantOptions {
    /// Simulate first-order thrust lag.
    pub thrust_model: bool,
    /// Simulate spin-up dead time from standstill (needs the thrust model).
    pub dead_time: bool,
}

impl Default for PlantOptions {
    fn default() -> Self {
        Self { thrust_model: true, dead_time: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensatorConfig {
    pub enabled: bool,
    pub gain: f64,
    /// Symmetric output limit (N).
    pub limit: f64,
}

impl Default for CompensatorConfig {
    fn default() -> Self {
        Self { enabled: true, gain: 5.0, limit: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub params: RobotParams,
    pub nmpc: OcpConfig,
    pub weights: OcpWeights,
    pub compensator: CompensatorConfig,
    pub reference: ReferenceSource,
    pub duration: f64,
    pub plant_step: f64,
    pub control_period: f64,
    pub plant: PlantOptions,
    pub noise: Option<NoiseConfig>,
    pub seed: u64,
    pub disturbances: Vec<DisturbanceEvent>,
    /// Constant world Z force added to the plant (N).
    pub z_force_bias: f64,
    pub initial: State,
    /// Initial rotor thrusts; hover thrust when `None`.
    pub initial_thrust: Option<DVector<f64>>,
}

impl Scenario {
    pub fn control_ratio(&self) -> usize {
        (self.control_period / self.plant_step).round() as usize
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.plant_step).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        self.params.validate().map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        if !(self.plant_step > 0.0) || !(self.control_period > 0.0) || !(self.duration > 0.0) {
            return bad("plant step, control period and duration must be positive".into());
        }
        let ratio = self.control_period / self.plant_step;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad(format!("control period {} is not a multiple of the plant step {}", self.control_period, self.plant_step));
        }
        if let ReferenceSource::Setpoints(list) = &self.reference {
            if list.is_empty() || list[0].0 != 0.0 {
                return bad("the first setpoint must start at t = 0".into());
            }
            if list.windows(2).any(|w| w[1].0 <= w[0].0) || list.iter().any(|(t, _)| *t > self.duration) {
                return bad("setpoint switch times must increase and lie within the duration".into());
            }
        }
        if self.initial.rotor_count() != self.params.rotor_count() {
            return bad("initial state does not match the rotor count".into());
        }
        if self.plant.dead_time && !self.plant.thrust_model {
            return bad("dead time needs the thrust model".into());
        }
        Ok(())
    }

    /// World force and body torque acting on the plant at `t`.
    pub fn disturbance_at(&self, t: f64) -> Disturbance {
        let mut d = Disturbance::force_z(self.z_force_bias);
        for ev in &self.disturbances {
            if t >= ev.start && t < ev.start + ev.duration {
                d.force += Vector3::from(ev.force);
                d.torque += Vector3::from(ev.torque);
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The solver returned non-finite iterates.
    Diverged,
    /// The vehicle state became non-finite or left the flight volume.
    Crashed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
            RunStatus::Crashed => "crashed",
        }
    }
}

/// Per-solve statistics carried into the log (wall time is kept apart so
/// logs stay reproducible).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickStats {
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    pub cost: f64,
    pub qp_max_iter: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub state: State,
    /// Thrust produced by the rotors.
    pub thrust: DVector<f64>,
    /// Held command.
    pub input: Input,
    pub reference: PoseTarget,
    pub f_dz: f64,
    pub stats: TickStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub scenario: String,
    pub records: Vec<Record>,
    /// Command sequence, one entry per controller tick.
    pub commands: Vec<Input>,
    /// Wall time of each solve (ms).
    pub solve_times_ms: Vec<f64>,
    pub status: RunStatus,
    /// Plant integration steps at which a servo angle had to be clamped.
    pub servo_clamp_events: usize,
    /// Start time and initial/target position of the first reference segment.
    pub first_step: (f64, Vector3<f64>, Vector3<f64>),
    /// End of the first reference segment (s).
    pub first_segment_end: f64,
}

impl RunLog {
    pub fn position_error(&self, k: usize) -> f64 {
        let r = &self.records[k];
        (r.state.position - r.reference.position).norm()
    }
}

/// Distance from the reference beyond which the run is declared crashed.
pub const CRASH_DISTANCE: f64 = 10.0;

fn add_noise(x: &State, noise: &NoiseConfig, rng: &mut ChaCha8Rng) -> State {
    let mut draw = |sigma: f64| if sigma > 0.0 { Normal::new(0.0, sigma).unwrap().sample(rng) } else { 0.0 };
    let mut y = x.clone();
    for i in 0..3 {
        y.position[i] += draw(noise.position);
    }
    for i in 0..3 {
        y.velocity[i] += draw(noise.velocity);
    }
    let rv = Vector3::new(draw(noise.attitude), draw(noise.attitude), draw(noise.attitude));
    let angle = rv.norm();
    if angle > 0.0 {
        let axis = rv / angle;
        let (s, c) = (0.5 * angle).sin_cos();
        y.attitude = quat_normalize(&quat_mul(&y.attitude, &Quat::new(c, s * axis.x, s * axis.y, s * axis.z)));
    }
    for i in 0..3 {
        y.body_rate[i] += draw(noise.body_rate);
    }
    for a in y.servo.iter_mut() {
        *a += draw(noise.servo);
    }
    y
}

/// Integrates the plant over one step of length `h` starting at `t`,
/// substepping when an actuator time constant is short compared with `h`.
fn plant_step(
    plant: &mut PlantState,
    u: &Input,
    scenario: &Scenario,
    t: f64,
    h: f64,
) -> Result<usize, crate::model::ModelError> {
    let p = &scenario.params;
    let tau = p.servo_time_constant.min(if plant.thrust.is_some() { p.thrust_time_constant } else { f64::INFINITY });
    let subs = ((h / (0.5 * tau)).ceil() as usize).max(1);
    let hs = h / subs as f64;
    let mut clamps = 0;
    for s in 0..subs {
        let t0 = t + s as f64 * hs;
        let x = plant.to_vector();
        let mut failed = None;
        let next = rk4_step(&x, hs, Some(idx::QUAT), |tau, v| {
            let mut probe = plant.clone();
            probe.set_from_vector(v);
            // intermediate RK4 stages leave the unit sphere at high body rates
            probe.state.attitude = quat_normalize(&probe.state.attitude);
            match plant_deriv(&probe, u, &scenario.disturbance_at(t0 + tau), p, t0 + tau) {
                Ok(d) => d.to_vector(),
                Err(e) => {
                    failed = Some(e);
                    DVector::from_element(v.len(), f64::NAN)
                }
            }
        });
        if let Some(e) = failed {
            return Err(e);
        }
        plant.set_from_vector(&next?);
        let mut clamped = false;
        for a in plant.state.servo.iter_mut() {
            let c = a.clamp(p.servo_min, p.servo_max);
            clamped |= c != *a;
            *a = c;
        }
        clamps += clamped as usize;
    }
    Ok(clamps)
}

fn first_segment(scenario: &Scenario) -> (f64, f64) {
    match &scenario.reference {
        ReferenceSource::Setpoints(list) => (0.0, list.get(1).map_or(scenario.duration, |s| s.0)),
        ReferenceSource::Figure8(_) => (0.0, scenario.duration),
    }
}

pub fn run_closed_loop(scenario: &Scenario) -> Result<RunLog, SimError> {
    scenario.validate()?;
    let p = &scenario.params;
    let n = p.rotor_count();
    let map = build_allocation(p)?;
    let solver = Nmpc::new(p.clone(), scenario.nmpc, scenario.weights)?;
    let h = scenario.plant_step;
    let ratio = scenario.control_ratio();
    let steps = scenario.step_count();

    let thrust0 = scenario.initial_thrust.clone().unwrap_or_else(|| DVector::from_element(n, p.hover_thrust()));
    let mut plant = if scenario.plant.thrust_model {
        PlantState::with_thrust(scenario.initial.clone(), thrust0.clone(), scenario.plant.dead_time)
    } else {
        PlantState::ideal(scenario.initial.clone())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut iterm = ITermState::new(scenario.compensator.gain, scenario.control_period, scenario.compensator.limit);
    let mut warm: Option<WarmStart> = None;
    let mut u = Input::new(thrust0, scenario.initial.servo.clone());
    let mut f_dz = 0.0;
    let mut stats = TickStats::default();

    let (seg_start, seg_end) = first_segment(scenario);
    let mut log = RunLog {
        scenario: scenario.name.clone(),
        records: Vec::with_capacity(steps + 1),
        commands: Vec::new(),
        solve_times_ms: Vec::new(),
        status: RunStatus::Completed,
        servo_clamp_events: 0,
        first_step: (seg_start, scenario.initial.position, scenario.reference.pose_at(seg_start).position),
        first_segment_end: seg_end,
    };

    for k in 0..=steps {
        let t = k as f64 * h;
        let reference = scenario.reference.pose_at(t);
        if !plant.state.is_finite() || (plant.state.position - reference.position).norm() > CRASH_DISTANCE {
            log.status = RunStatus::Crashed;
            break;
        }
        if k % ratio == 0 && k < steps {
            let measured = match &scenario.noise {
                Some(nz) => add_noise(&plant.state, nz, &mut rng),
                None => plant.state.clone(),
            }
            .normalized();
            if scenario.compensator.enabled {
                let (out, next) = iterm_update(&iterm, measured.position.z - reference.position.z);
                f_dz = out;
                iterm = next;
            }
            let window = scenario.reference.window(t, p, &map, &scenario.nmpc);
            let guess = warm.take().unwrap_or_else(|| cold_start(&measured, &window, scenario.nmpc.model));
            let thrust_hat = plant.produced_thrust(&u.thrust);
            let res = solver.solve_rti(&measured, Some(&thrust_hat), &window, &guess, &Disturbance::force_z(f_dz))?;
            log.solve_times_ms.push(res.stats.wall_ms);
            stats = TickStats {
                qp_iterations: res.stats.qp_iterations,
                kkt_residual: res.stats.kkt_residual,
                cost: res.stats.cost,
                qp_max_iter: res.status == SolveStatus::QpMaxIter,
            };
            if res.status == SolveStatus::Diverged {
                log.status = RunStatus::Diverged;
                break;
            }
            u = res.u_now.clone();
            log.commands.push(u.clone());
            plant.command(&u, t, p);
            warm = Some(res.warm);
        }
        log.records.push(Record {
            t,
            state: plant.state.clone(),
            thrust: plant.produced_thrust(&u.thrust),
            input: u.clone(),
            reference,
            f_dz,
            stats,
        });
        if k < steps {
            match plant_step(&mut plant, &u, scenario, t, h) {
                Ok(c) => log.servo_clamp_events += c,
                Err(_) => {
                    log.status = RunStatus::Crashed;
                    break;
                }
            }
        }
    }
    Ok(log)
}
