//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tiltmpc::alloc::{allocate, build_allocation};
use tiltmpc::compensator::{iterm_update, ITermState};
use tiltmpc::model::quat::{quat_norm, rpy_to_quat};
use tiltmpc::model::{control_deriv, idx, rk4_step, rotor_wrench, Disturbance, Input, RobotParams, State};
use tiltmpc::nmpc::{cold_start, linearize_dynamics, stage_residual, Nmpc, OcpConfig, OcpWeights, PredictionModel};
use tiltmpc::refgen::{setpoint_window, PoseTarget};
use tiltmpc::sim::{
    lag_sensitivity, metrics, rpy_error, run_closed_loop, scenarios, servo_command_variation, write_log_csv,
    NoiseConfig, RunLog, RunStatus, Scenario,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(s: &Scenario) -> (RunLog, f64) {
    let t0 = Instant::now();
    let log = run_closed_loop(s).expect("scenario is valid");
    (log, t0.elapsed().as_secs_f64())
}

fn with_model(mut s: Scenario, model: PredictionModel) -> Scenario {
    s.nmpc.model = model;
    s
}

fn servo_oscillation() -> Outcome {
    let (servo, t_servo) = run(&with_model(scenarios::step_pose(), PredictionModel::Servo));
    let (naive, t_naive) = run(&with_model(scenarios::step_pose(), PredictionModel::NoServo));
    let (tv_s, tv_n) = (servo_command_variation(&servo), servo_command_variation(&naive));
    let ratio = tv_n / tv_s;
    outcome(
        ratio >= 2.0 && t_servo <= 30.0 && t_naive <= 30.0,
        format!("TV no-servo {tv_n:.2} / servo {tv_s:.2} = {ratio:.2}; runtime {t_naive:.1} s, {t_servo:.1} s"),
    )
}

fn step_convergence() -> Outcome {
    let (log, _) = run(&scenarios::step_pose());
    let target = Vector3::new(0.3, 0.6, 1.0);
    // the position must be within 0.05 m from some t0 < 2 s up to the switch
    let pre: Vec<_> = log.records.iter().filter(|r| r.t < 2.0).collect();
    let last_out = pre.iter().rposition(|r| (r.state.position - target).norm() > 0.05);
    let hold_from = match last_out {
        None => Some(0.0),
        Some(k) if k + 1 < pre.len() => Some(pre[k + 1].t),
        Some(_) => None,
    };
    let late: Vec<usize> = (0..log.records.len()).filter(|&k| log.records[k].t >= 6.0).collect();
    let worst = late.iter().fold([0.0f64; 3], |m, &k| {
        let e = rpy_error(&log, k);
        [m[0].max(e[0].abs()), m[1].max(e[1].abs()), m[2].max(e[2].abs())]
    });
    let worst_deg = worst.map(f64::to_degrees);
    let att_ok = log.status == RunStatus::Completed && !late.is_empty() && worst_deg.iter().all(|&e| e <= 5.0);
    outcome(
        hold_from.is_some() && att_ok,
        format!(
            "position held from {} s; max RPY error after 6 s ({:.2}, {:.2}, {:.2}) deg",
            hold_from.map_or("never".to_string(), |t| format!("{t:.3}")),
            worst_deg[0],
            worst_deg[1],
            worst_deg[2]
        ),
    )
}

fn noise_robustness() -> Outcome {
    let mut held = 0;
    let mut lines = Vec::new();
    for seed in 1..=5 {
        let noisy = |model| {
            let mut s = with_model(scenarios::step_pose(), model);
            s.noise = Some(NoiseConfig::default());
            s.seed = seed;
            run(&s).0
        };
        let servo = noisy(PredictionModel::Servo);
        let naive = noisy(PredictionModel::NoServo);
        let late_err = |log: &RunLog| {
            (0..log.records.len()).filter(|&k| log.records[k].t > 6.0).map(|k| log.position_error(k)).fold(0.0, f64::max)
        };
        // the initial approach does not count against the no-servo run
        let max_err = |log: &RunLog| {
            (0..log.records.len()).filter(|&k| log.records[k].t >= 2.0).map(|k| log.position_error(k)).fold(0.0, f64::max)
        };
        let servo_ok = servo.status == RunStatus::Completed && late_err(&servo) < 0.2;
        let naive_fails = naive.status != RunStatus::Completed || max_err(&naive) > 1.0;
        if servo_ok && naive_fails {
            held += 1;
        }
        lines.push(format!(
            "seed {seed}: servo {:.3} m, no-servo {} {:.3} m after 2 s",
            late_err(&servo),
            naive.status.as_str(),
            max_err(&naive)
        ));
    }
    outcome(held >= 4, format!("held on {held}/5 ({})", lines.join("; ")))
}

const RMSE_1X: ([f64; 3], [f64; 3]) = ([0.071, 0.067, 0.018], [4.934, 2.023, 2.789]);
const RMSE_2X: ([f64; 3], [f64; 3]) = ([0.103, 0.085, 0.029], [6.740, 1.857, 3.622]);

fn within(log: &RunLog, bound: ([f64; 3], [f64; 3])) -> (bool, String) {
    let m = metrics(log);
    let pos = [m.rmse_pos_x_m, m.rmse_pos_y_m, m.rmse_pos_z_m].map(|v| v.unwrap_or(f64::NAN));
    let att = [m.rmse_att_roll_deg, m.rmse_att_pitch_deg, m.rmse_att_yaw_deg].map(|v| v.unwrap_or(f64::NAN));
    let ok = log.status == RunStatus::Completed
        && pos.iter().zip(&bound.0).all(|(a, b)| a <= b)
        && att.iter().zip(&bound.1).all(|(a, b)| a <= b);
    (ok, format!("pos ({:.4}, {:.4}, {:.4}) m, att ({:.3}, {:.3}, {:.3}) deg", pos[0], pos[1], pos[2], att[0], att[1], att[2]))
}

fn trajectory_tracking(one_x: &RunLog) -> Outcome {
    let (two_x, _) = run(&scenarios::figure8(2));
    let (a, da) = within(one_x, RMSE_1X);
    let (b, db) = within(&two_x, RMSE_2X);
    outcome(a && b, format!("1x {da}; 2x {db}"))
}

fn lag_arithmetic() -> Outcome {
    let s = lag_sensitivity(0.0, -80.0, 7.0, 11.0, 0.2);
    let ok = (s.servo_relative_error_pct - 152.45).abs() <= 0.01 && (s.thrust_relative_error_pct + 7.27).abs() <= 0.01;
    outcome(
        ok,
        format!(
            "servo lag {:.1} deg -> {:.4}%, thrust lag {:.2} N -> {:.4}%",
            s.servo_lag_deg, s.servo_relative_error_pct, s.thrust_lag, s.thrust_relative_error_pct
        ),
    )
}

fn solver_timing(one_x: &RunLog) -> Outcome {
    let m = metrics(one_x);
    let (Some(p50), Some(p99)) = (m.solve_time_ms_p50, m.solve_time_ms_p99) else {
        return outcome(false, "no solves recorded");
    };
    outcome(p50 < 10.0 && p99 < 20.0, format!("p50 {p50:.3} ms, p99 {p99:.3} ms over {} solves", one_x.solve_times_ms.len()))
}

fn random_state(rng: &mut ChaCha8Rng) -> State {
    State {
        position: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) + Vector3::new(0.0, 0.0, 1.0),
        velocity: Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8)),
        attitude: rpy_to_quat(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)),
        body_rate: Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
        servo: DVector::from_fn(4, |_, _| rng.random_range(-1.4..1.4)),
    }
}

fn random_input(rng: &mut ChaCha8Rng) -> Input {
    Input::new(DVector::from_fn(4, |_, _| rng.random_range(1.0..15.0)), DVector::from_fn(4, |_, _| rng.random_range(-1.4..1.4)))
}

fn jacobians(rng: &mut ChaCha8Rng, p: &RobotParams) -> Result<String, String> {
    let d = Disturbance { force: Vector3::new(0.2, -0.1, 0.5), torque: Vector3::zeros() };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (x, u) = (random_state(rng), random_input(rng));
        let (_, a, b) = linearize_dynamics(&x, &u, &d, p, 0.1).map_err(|e| e.to_string())?;
        let next = |x: &DVector<f64>, u: &DVector<f64>| {
            let (s, _, _) = linearize_dynamics(&State::from_slice(x.as_slice(), 4), &Input::from_slice(u.as_slice()), &d, p, 0.1).unwrap();
            s.to_vector()
        };
        let (xv, uv) = (x.to_vector(), u.to_vector());
        let mut compare = |analytic: &DMatrix<f64>, base: &DVector<f64>, perturb_x: bool| {
            for c in 0..base.len() {
                let (mut plus, mut minus) = (base.clone(), base.clone());
                plus[c] += h;
                minus[c] -= h;
                let fd = if perturb_x { (next(&plus, &uv) - next(&minus, &uv)) / (2.0 * h) } else { (next(&xv, &plus) - next(&xv, &minus)) / (2.0 * h) };
                for r in 0..fd.len() {
                    let rel = (analytic[(r, c)] - fd[r]).abs() / analytic[(r, c)].abs().max(1e-2);
                    worst = worst.max(rel);
                }
            }
        };
        compare(&a, &xv, true);
        compare(&b, &uv, false);
    }
    if worst <= 1e-5 { Ok(format!("jacobian {worst:.1e}")) } else { Err(format!("jacobian rel err {worst:.2e}")) }
}

fn rk4_order(p: &RobotParams) -> Result<String, String> {
    let tau = p.servo_time_constant;
    let exact = 1.0 - (-0.5 / tau).exp();
    let err = |h: f64| {
        let steps = (0.5 / h).round() as usize;
        let mut x = DVector::from_element(1, 0.0);
        for _ in 0..steps {
            x = rk4_step(&x, h, None, |_, v| DVector::from_element(1, (1.0 - v[0]) / tau)).unwrap();
        }
        (x[0] - exact).abs()
    };
    let order = (err(0.01) / err(0.005)).log2();
    if (3.5..=4.5).contains(&order) { Ok(format!("RK4 order {order:.3}")) } else { Err(format!("RK4 order {order:.3}")) }
}

fn allocation(rng: &mut ChaCha8Rng, p: &RobotParams) -> Result<String, String> {
    let map = build_allocation(p).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let f: Vec<f64> = (0..4).map(|_| rng.random_range(3.0..12.0)).collect();
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-0.7..0.7)).collect();
        let w = rotor_wrench(&a, &f, p);
        let alloc = allocate(&map, &w);
        if alloc.saturated {
            return Err("allocation saturated on a feasible wrench".into());
        }
        let back = rotor_wrench(alloc.angle.as_slice(), alloc.thrust.as_slice(), p);
        worst = worst.max((back.force - w.force).amax().max((back.torque - w.torque).amax()));
    }
    let (am, ap) = (map.matrix(), map.pinv());
    let penrose = [
        (am * ap * am - am).amax(),
        (ap * am * ap - ap).amax(),
        ((am * ap).transpose() - am * ap).amax(),
        ((ap * am).transpose() - ap * am).amax(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    if worst <= 1e-8 && penrose <= 1e-9 {
        Ok(format!("round trip {worst:.1e}, Penrose {penrose:.1e}"))
    } else {
        Err(format!("round trip {worst:.2e}, Penrose {penrose:.2e}"))
    }
}

fn quaternion_drift(rng: &mut ChaCha8Rng, p: &RobotParams) -> Result<String, String> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut x = random_state(rng);
        x.body_rate *= 3.0;
        let u = random_input(rng);
        let mut v = x.to_vector();
        for _ in 0..500 {
            v = rk4_step(&v, 0.005, Some(idx::QUAT), |_, s| {
                // stage points are off the unit sphere; the step renormalizes
                control_deriv(&State::from_slice(s.as_slice(), 4).normalized(), &u, &Disturbance::default(), p).unwrap().to_vector()
            })
            .map_err(|e| e.to_string())?;
            worst = worst.max((quat_norm(&State::from_slice(v.as_slice(), 4).attitude) - 1.0).abs());
        }
    }
    if worst <= 1e-12 { Ok(format!("quat drift {worst:.1e}")) } else { Err(format!("quat drift {worst:.2e}")) }
}

fn anti_windup(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut s = ITermState::new(5.0, 0.01, 5.0);
    let mut worst = 0.0f64;
    for k in 0..1_000_000 {
        // long runs of one sign push the integrator into saturation
        let e = if (k / 5000) % 2 == 0 { rng.random_range(-0.5..3.0) } else { rng.random_range(-3.0..0.5) };
        let (out, next) = iterm_update(&s, e);
        if !(out.abs() <= 5.0) {
            return Err(format!("output {out} at step {k}"));
        }
        worst = worst.max((next.gain * next.accumulator - out).abs());
        s = next;
    }
    if worst <= 1e-9 { Ok(format!("anti-windup {worst:.1e}")) } else { Err(format!("accumulator inconsistency {worst:.2e}")) }
}

fn sign_invariance(rng: &mut ChaCha8Rng, p: &RobotParams) -> Result<String, String> {
    let w = OcpWeights::default();
    for _ in 0..1000 {
        let (mut x, u) = (random_state(rng), random_input(rng));
        let x_r = random_state(rng);
        let u_r = Input::hover(p);
        let a = stage_residual(&x, &u, &x_r, &u_r, &w);
        x.attitude = -x.attitude;
        let b = stage_residual(&x, &u, &x_r, &u_r, &w);
        if (a - b).amax() > 1e-12 {
            return Err("attitude cost changes under q -> -q".into());
        }
    }
    Ok("q -> -q invariant".into())
}

fn solve_bounds(rng: &mut ChaCha8Rng, p: &RobotParams) -> Result<String, String> {
    let nmpc = Nmpc::new(p.clone(), OcpConfig::default(), OcpWeights::default()).map_err(|e| e.to_string())?;
    let map = build_allocation(p).map_err(|e| e.to_string())?;
    for k in 0..10_000 {
        let x = random_state(rng);
        let target = PoseTarget::new(
            Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) + Vector3::new(0.0, 0.0, 1.0),
            rpy_to_quat(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-3.1..3.1)),
        );
        let w = setpoint_window(&target, p, &map, nmpc.cfg.horizon, nmpc.cfg.t_integ);
        let warm = cold_start(&x, &w, PredictionModel::Servo);
        let res = nmpc.solve_rti(&x, None, &w, &warm, &Disturbance::default()).map_err(|e| e.to_string())?;
        let all_inside = res.u_now.within_bounds(p)
            && res.warm.inputs.iter().all(|u| Input::from_slice(u.as_slice()).within_bounds(p));
        if !all_inside {
            return Err(format!("solve {k} returned inputs outside the bounds"));
        }
    }
    Ok("10^4 solves within bounds".into())
}

fn numerical_properties() -> Outcome {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let results = [
        jacobians(&mut rng, &p),
        rk4_order(&p),
        allocation(&mut rng, &p),
        quaternion_drift(&mut rng, &p),
        anti_windup(&mut rng),
        sign_invariance(&mut rng, &p),
        solve_bounds(&mut rng, &p),
    ];
    let pass = results.iter().all(Result::is_ok);
    let detail = results.iter().map(|r| match r {
        Ok(s) => s.clone(),
        Err(s) => format!("FAILED {s}"),
    });
    outcome(pass, detail.collect::<Vec<_>>().join("; "))
}

fn sysid_recovery() -> Outcome {
    use rand_distr::{Distribution, Normal};
    use tiltmpc::sysid::{fit_first_order, fit_quadratic_thrust, StepLogSeries};

    let step = |tau: f64, dead: f64| {
        let times: Vec<f64> = (0..=1500).map(|k| k as f64 * 0.001).collect();
        let command = times.iter().map(|&t| if t >= 0.1 { 1.0 } else { 0.0 }).collect();
        let response = times.iter().map(|&t| if t > 0.1 + dead { 1.0 - (-(t - 0.1 - dead) / tau).exp() } else { 0.0 }).collect();
        fit_first_order(&StepLogSeries::new(times, command, response, "rad").unwrap()).unwrap()
    };
    let servo = step(0.0859, 0.0);
    let thrust = step(0.0942, 0.35);
    let servo_ok = (servo.time_constant - 0.0859).abs() / 0.0859 <= 0.01;
    let thrust_ok = (thrust.time_constant - 0.0942).abs() / 0.0942 <= 0.02 && (thrust.dead_time - 0.35).abs() / 0.35 <= 0.02;

    let kt = 1.5e-5;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let w = 300.0 + 40.0 * i as f64;
                let f = kt * w * w;
                (w, f + Normal::new(0.0, 0.01 * f).unwrap().sample(&mut rng))
            })
            .collect();
        worst = worst.max(((fit_quadratic_thrust(&samples).unwrap() - kt) / kt).abs());
    }
    outcome(
        servo_ok && thrust_ok && worst <= 0.01,
        format!(
            "servo tau {:.5}; thrust tau {:.5}, dead {:.4}; k_t worst rel err {:.3}%",
            servo.time_constant,
            thrust.time_constant,
            thrust.dead_time,
            worst * 100.0
        ),
    )
}

fn disturbance_rejection() -> Outcome {
    let s = scenarios::disturbance_pulse();
    let (log, _) = run(&s);
    let ev = &s.disturbances[0];
    let end = ev.start + ev.duration;
    let last_out = (0..log.records.len()).filter(|&k| log.position_error(k) > 0.05).map(|k| log.records[k].t).fold(end, f64::max);
    let recovery = last_out - end;
    outcome(
        log.status == RunStatus::Completed && recovery <= 1.5,
        format!("back within 0.05 m {recovery:.3} s after the pulse"),
    )
}

fn csv_bytes(log: &RunLog) -> Vec<u8> {
    let mut buf = Vec::new();
    write_log_csv(log, &mut buf).unwrap();
    buf
}

fn determinism() -> Outcome {
    let mut noisy = scenarios::step_pose();
    noisy.noise = Some(NoiseConfig::default());
    noisy.seed = 11;
    let mut all = true;
    let mut sizes = Vec::new();
    for s in [noisy, scenarios::figure8(2), scenarios::disturbance_pulse()] {
        let a = csv_bytes(&run(&s).0);
        let b = csv_bytes(&run(&s).0);
        all &= a == b;
        sizes.push(format!("{} {} bytes", s.name, a.len()));
    }
    outcome(all, format!("identical logs: {}", sizes.join(", ")))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let (one_x, _) = run(&scenarios::figure8(1));
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("servo command oscillation", Box::new(servo_oscillation)),
        ("step convergence", Box::new(step_convergence)),
        ("noise robustness", Box::new(noise_robustness)),
        ("trajectory tracking", Box::new(|| trajectory_tracking(&one_x))),
        ("lag sensitivity arithmetic", Box::new(lag_arithmetic)),
        ("solver timing", Box::new(|| solver_timing(&one_x))),
        ("numerical properties", Box::new(numerical_properties)),
        ("sysid recovery", Box::new(sysid_recovery)),
        ("disturbance rejection", Box::new(disturbance_rejection)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed in {:.1} s", checks.len() - failed, checks.len(), started.elapsed().as_secs_f64());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
