//! TOML scenario configuration.
//!
//! Every key has a default; attitude angles are given in degrees and
//! converted to radians when the scenario is built.

use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tiltmpc::model::{RobotParams, Rotor, State};
use tiltmpc::nmpc::{OcpConfig, OcpWeights, PredictionModel, StateWeights};
use tiltmpc::refgen::{build_figure8, PoseTarget};
use tiltmpc::sim::{scenarios, CompensatorConfig, DisturbanceEvent, NoiseConfig, PlantOptions, ReferenceSource, Scenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotorConfig {
    /// Body frame (m).
    pub position: [f64; 3],
    /// deg
    pub azimuth_deg: f64,
    pub spin: f64,
}

impl Default for RotorConfig {
    fn default() -> Self {
        Self { position: [0.0; 3], azimuth_deg: 0.0, spin: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    /// kg
    pub mass: f64,
    /// kg·m², diagonal
    pub inertia: [f64; 3],
    /// m/s²
    pub gravity: f64,
    /// X layout arm length (m); ignored when `rotors` is given.
    pub arm_length: f64,
    /// X layout spin directions.
    pub spins: Vec<f64>,
    /// N·s²
    pub thrust_coeff: f64,
    /// k_q / k_t (m)
    pub torque_ratio: f64,
    /// N
    pub thrust_min: f64,
    /// N
    pub thrust_max: f64,
    pub servo_min_deg: f64,
    pub servo_max_deg: f64,
    /// s
    pub servo_time_constant: f64,
    /// s
    pub thrust_time_constant: f64,
    /// s
    pub thrust_dead_time: f64,
    /// Explicit rotor list replacing the X layout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rotors: Option<Vec<RotorConfig>>,
}

impl Default for RobotConfig {
    fn default() -> Self {
        let p = RobotParams::default();
        Self {
            mass: p.mass,
            inertia: p.inertia.into(),
            gravity: p.gravity,
            arm_length: 0.2,
            spins: p.rotors.iter().map(|r| r.spin).collect(),
            thrust_coeff: p.thrust_coeff,
            torque_ratio: p.torque_ratio,
            thrust_min: p.thrust_min,
            thrust_max: p.thrust_max,
            servo_min_deg: -90.0,
            servo_max_deg: 90.0,
            servo_time_constant: p.servo_time_constant,
            thrust_time_constant: p.thrust_time_constant,
            thrust_dead_time: p.thrust_dead_time,
            rotors: None,
        }
    }
}

impl RobotConfig {
    pub fn params(&self) -> Result<RobotParams, ConfigError> {
        let rotors = match &self.rotors {
            Some(list) => list
                .iter()
                .map(|r| Rotor { position: Vector3::from(r.position), azimuth: r.azimuth_deg.to_radians(), spin: r.spin })
                .collect(),
            None => {
                let spins: [f64; 4] = self.spins.as_slice().try_into().map_err(|_| {
                    ConfigError::Dimension(format!("robot.spins has {} entries, the X layout needs 4", self.spins.len()))
                })?;
                RobotParams::x_layout(self.arm_length, spins)
            }
        };
        let p = RobotParams {
            mass: self.mass,
            inertia: Vector3::from(self.inertia),
            gravity: self.gravity,
            rotors,
            thrust_coeff: self.thrust_coeff,
            torque_ratio: self.torque_ratio,
            thrust_min: self.thrust_min,
            thrust_max: self.thrust_max,
            servo_min: self.servo_min_deg.to_radians(),
            servo_max: self.servo_max_deg.to_radians(),
            servo_time_constant: self.servo_time_constant,
            thrust_time_constant: self.thrust_time_constant,
            thrust_dead_time: self.thrust_dead_time,
        };
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmpcConfig {
    pub horizon: usize,
    /// Shooting interval (s).
    pub t_integ: f64,
    /// m/s, per axis
    pub v_limit: f64,
    /// rad/s, per axis
    pub omega_limit: f64,
    pub soft_weight: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    /// `no_servo_no_thrust`, `servo_only` or `servo_and_thrust`.
    pub model: PredictionModel,
    /// Weight on `f_c - f_r`.
    pub r_thrust: f64,
    /// Weight on `α_c - α`.
    pub r_servo: f64,
    pub stage: StateWeights,
    pub terminal: StateWeights,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        let c = OcpConfig::default();
        let w = OcpWeights::default();
        Self {
            horizon: c.horizon,
            t_integ: c.t_integ,
            v_limit: c.v_limit,
            omega_limit: c.omega_limit,
            soft_weight: c.soft_weight,
            qp_tol: c.qp_tol,
            qp_max_iter: c.qp_max_iter,
            model: c.model,
            r_thrust: w.thrust,
            r_servo: w.servo_command,
            stage: w.stage,
            terminal: w.terminal,
        }
    }
}

impl NmpcConfig {
    fn ocp(&self) -> OcpConfig {
        OcpConfig {
            horizon: self.horizon,
            t_integ: self.t_integ,
            v_limit: self.v_limit,
            omega_limit: self.omega_limit,
            soft_weight: self.soft_weight,
            qp_tol: self.qp_tol,
            qp_max_iter: self.qp_max_iter,
            model: self.model,
        }
    }

    fn weights(&self) -> OcpWeights {
        OcpWeights { stage: self.stage, terminal: self.terminal, thrust: self.r_thrust, servo_command: self.r_servo }
    }
}

/// Plant and loop settings. The optional switches fall back to the
/// scenario's own choice when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// s
    pub plant_step: f64,
    /// s
    pub control_period: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thrust_model: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dead_time: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compensator: Option<bool>,
    /// N/(m·s)
    pub k_i: f64,
    /// N
    pub f_dz_limit: f64,
    /// N, constant world Z force on the plant
    pub z_force_bias: f64,
    pub noise: bool,
    pub noise_sigma: NoiseConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        let c = CompensatorConfig::default();
        Self {
            plant_step: 0.005,
            control_period: 0.01,
            seed: 0,
            duration: None,
            thrust_model: None,
            dead_time: None,
            compensator: None,
            k_i: c.gain,
            f_dz_limit: c.limit,
            z_force_bias: 0.0,
            noise: false,
            noise_sigma: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointConfig {
    /// s
    pub time: f64,
    /// m
    pub position: [f64; 3],
    /// deg
    pub rpy_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub hover_position: [f64; 3],
    /// s
    pub hover_duration: f64,
    pub step_position: [f64; 3],
    pub step_rpy_deg: [f64; 3],
    /// s
    pub step_switch_time: f64,
    /// s
    pub step_duration: f64,
    /// s
    pub setpoints_duration: f64,
    /// Figure-eight period at 1x (s).
    pub figure8_period: f64,
    pub setpoints: Vec<SetpointConfig>,
    pub disturbances: Vec<DisturbanceEvent>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            hover_position: scenarios::HOVER_POSITION,
            hover_duration: 10.0,
            step_position: [0.3, 0.6, 1.0],
            step_rpy_deg: [30.0, 60.0, 90.0],
            step_switch_time: 2.0,
            step_duration: 8.0,
            setpoints_duration: 24.0,
            figure8_period: 20.0,
            setpoints: vec![
                SetpointConfig { time: 0.0, position: [0.3, 0.2, 1.2], rpy_deg: [0.5f64.to_degrees(), 0.0, 0.3f64.to_degrees()] },
                SetpointConfig {
                    time: 8.0,
                    position: [-0.3, 0.0, 1.0],
                    rpy_deg: [0.5f64.to_degrees(), 0.5f64.to_degrees(), -0.3f64.to_degrees()],
                },
                SetpointConfig { time: 16.0, position: scenarios::HOVER_POSITION, rpy_deg: [0.0; 3] },
            ],
            disturbances: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub robot: RobotConfig,
    pub nmpc: NmpcConfig,
    pub sim: SimConfig,
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Hover,
    StepPose,
    Setpoints,
    /// Figure-eight at the given speed factor.
    Trajectory(u32),
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub model: Option<PredictionModel>,
}

fn pose(position: [f64; 3], rpy_deg: [f64; 3]) -> PoseTarget {
    PoseTarget::from_rpy(Vector3::from(position), rpy_deg[0].to_radians(), rpy_deg[1].to_radians(), rpy_deg[2].to_radians())
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text).map_err(|message| ConfigError::Parse { path: path.display().to_string(), message })
    }

    /// Parses TOML text; the error message carries the line and column.
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn scenario(&self, kind: ScenarioKind, ov: &Overrides) -> Result<Scenario, ConfigError> {
        let sc = &self.scenario;
        let mut s = match kind {
            ScenarioKind::Hover => scenarios::hover_at(sc.hover_position, sc.hover_duration),
            ScenarioKind::StepPose => {
                let rpy = sc.step_rpy_deg.map(f64::to_radians);
                scenarios::step_pose_with(sc.step_position, rpy, sc.step_switch_time, sc.step_duration)
            }
            ScenarioKind::Setpoints => {
                let list = sc.setpoints.iter().map(|p| (p.time, pose(p.position, p.rpy_deg))).collect();
                scenarios::setpoints_from(list, sc.setpoints_duration)
            }
            ScenarioKind::Trajectory(speed) => {
                if speed == 0 {
                    return Err(ConfigError::Invalid("speed factor must be at least 1".into()));
                }
                let mut s = scenarios::figure8_with_period(sc.figure8_period / speed as f64);
                s.name = format!("figure8_{speed}x");
                s
            }
        };
        let params = self.robot.params()?;
        let n = params.rotor_count();
        s.params = params;
        s.nmpc = self.nmpc.ocp();
        s.weights = self.nmpc.weights();
        if let Some(m) = ov.model {
            s.nmpc.model = m;
        }

        let sim = &self.sim;
        s.plant_step = sim.plant_step;
        s.control_period = sim.control_period;
        s.seed = ov.seed.unwrap_or(sim.seed);
        if let Some(d) = ov.duration.or(sim.duration) {
            s.duration = d;
            // a shortened run drops the targets it never reaches
            if let ReferenceSource::Setpoints(list) = &mut s.reference {
                list.retain(|(t, _)| *t == 0.0 || *t < d);
            }
        }
        s.plant = PlantOptions {
            thrust_model: sim.thrust_model.unwrap_or(s.plant.thrust_model),
            dead_time: sim.dead_time.unwrap_or(s.plant.dead_time),
        };
        s.compensator = CompensatorConfig {
            enabled: sim.compensator.unwrap_or(s.compensator.enabled),
            gain: sim.k_i,
            limit: sim.f_dz_limit,
        };
        s.z_force_bias = sim.z_force_bias;
        s.noise = sim.noise.then_some(sim.noise_sigma);
        s.disturbances = sc.disturbances.clone();

        // the initial state depends on the robot
        match &s.reference {
            ReferenceSource::Figure8(f) => {
                let traj = build_figure8(f.period);
                let (x0, f0) = scenarios::trajectory_start(&traj, &s.params)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                s.initial = x0;
                s.initial_thrust = Some(f0);
            }
            ReferenceSource::Setpoints(_) => {
                s.initial = State { servo: DVector::zeros(n), ..s.initial.clone() };
                s.initial_thrust = None;
            }
        }
        s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(s)
    }
}
