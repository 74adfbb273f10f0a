use serde::{Deserialize, Serialize};

use super::metrics::{max_thrust_command_step, servo_command_variation};
use super::{metrics, run_closed_loop, Metrics, PlantOptions, RunLog, RunStatus, Scenario, SimError};
use crate::nmpc::PredictionModel;

pub const VARIANTS: [PredictionModel; 3] =
    [PredictionModel::NoServo, PredictionModel::Servo, PredictionModel::ServoThrust];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: PredictionModel,
    pub status: RunStatus,
    pub servo_total_variation: f64,
    pub max_thrust_step: f64,
    /// Root of the summed squared per-axis position RMSE (m).
    pub position_rmse: f64,
    pub final_position: [f64; 3],
    pub final_attitude: [f64; 4],
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<VariantReport>,
    /// `TV(no_servo) / TV(servo_only)`.
    pub tv_ratio: f64,
    pub tv_ordering_holds: bool,
    pub rmse_ordering_holds: bool,
}

impl AblationReport {
    pub fn get(&self, variant: PredictionModel) -> &VariantReport {
        self.variants.iter().find(|v| v.variant == variant).expect("all variants are run")
    }
}

fn report(variant: PredictionModel, log: &RunLog) -> VariantReport {
    let m = metrics(log);
    let last = log.records.last();
    let sq = |v: Option<f64>| v.map_or(f64::NAN, |x| x * x);
    VariantReport {
        variant,
        status: log.status,
        servo_total_variation: servo_command_variation(log),
        max_thrust_step: max_thrust_command_step(log),
        position_rmse: (sq(m.rmse_pos_x_m) + sq(m.rmse_pos_y_m) + sq(m.rmse_pos_z_m)).sqrt(),
        final_position: last.map_or([f64::NAN; 3], |r| r.state.position.into()),
        final_attitude: last.map_or([f64::NAN; 4], |r| {
            let q = r.state.attitude;
            [q.w, q.i, q.j, q.k]
        }),
        metrics: m,
    }
}

/// Runs `scenario` once per prediction model (plant with thrust lag in
/// every case) and compares them. Variants run on separate threads.
pub fn ablation_compare(scenario: &Scenario) -> Result<(AblationReport, Vec<RunLog>), SimError> {
    let runs: Vec<Result<RunLog, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = VARIANTS
            .iter()
            .map(|&variant| {
                let mut sc = scenario.clone();
                sc.name = format!("{}_{}", scenario.name, variant.label());
                sc.nmpc.model = variant;
                sc.plant = PlantOptions { thrust_model: true, dead_time: scenario.plant.dead_time };
                s.spawn(move || run_closed_loop(&sc))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let logs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let variants: Vec<VariantReport> = VARIANTS.iter().zip(&logs).map(|(&v, l)| report(v, l)).collect();
    let tv_ratio = variants[0].servo_total_variation / variants[1].servo_total_variation;
    let rep = AblationReport {
        tv_ordering_holds: tv_ratio >= 2.0,
        rmse_ordering_holds: variants[2].position_rmse <= variants[1].position_rmse * 1.05,
        tv_ratio,
        variants,
    };
    Ok((rep, logs))
}

/// Relative wrench-term errors caused by actuator lag when a fraction
/// `remaining` of a servo move and of a thrust move is still outstanding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagSensitivity {
    pub servo_lag_deg: f64,
    /// `(cos(α_target - lag) - cos(α_target)) / cos(α_target)`, percent.
    pub servo_relative_error_pct: f64,
    pub thrust_lag: f64,
    /// `((f_target - lag) - f_target) / f_target`, percent.
    pub thrust_relative_error_pct: f64,
}

pub fn lag_sensitivity(
    servo_from_deg: f64,
    servo_to_deg: f64,
    thrust_from: f64,
    thrust_to: f64,
    remaining: f64,
) -> LagSensitivity {
    let servo_lag_deg = (servo_to_deg - servo_from_deg) * remaining;
    let thrust_lag = (thrust_to - thrust_from) * remaining;
    let lagged = (servo_to_deg - servo_lag_deg).to_radians().cos();
    let target = servo_to_deg.to_radians().cos();
    LagSensitivity {
        servo_lag_deg,
        servo_relative_error_pct: (lagged - target) / target * 100.0,
        thrust_lag,
        thrust_relative_error_pct: ((thrust_to - thrust_lag) - thrust_to) / thrust_to * 100.0,
    }
}
