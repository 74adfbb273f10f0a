use std::path::Path;
use std::process::{Command, Output};

fn tiltmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiltmpc")).args(args).output().expect("binary runs")
}

fn metrics(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn missing_config_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = tiltmpc(&["--config", missing.to_str().unwrap(), "hover", "--duration", "0.1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn invalid_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[robot]\nmass = 2.0\ninertia = 1\n").unwrap();
    let out = tiltmpc(&["--config", path.to_str().unwrap(), "hover"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml") && err.contains("line 3"), "{err}");
}

#[test]
fn written_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    assert!(tiltmpc(&["write-config", path.to_str().unwrap()]).status.success());
    let out_dir = dir.path().join("run");
    let out = tiltmpc(&[
        "--config",
        path.to_str().unwrap(),
        "hover",
        "--duration",
        "0.5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(out_dir.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 101);
    assert!(log.starts_with("t,px,py,pz,"));
}

#[test]
fn trajectory_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiltmpc(&["traj", "--speed", "2x", "--duration", "1", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = metrics(dir.path());
    for key in [
        "rmse_pos_x_m",
        "rmse_pos_y_m",
        "rmse_pos_z_m",
        "rmse_att_roll_deg",
        "rmse_att_pitch_deg",
        "rmse_att_yaw_deg",
        "overshoot_z_pct",
        "settle_s",
        "cmd_total_variation",
        "solve_time_ms_p50",
        "solve_time_ms_p99",
        "status",
    ] {
        assert!(m.get(key).is_some(), "missing {key}");
    }
    assert_eq!(m["status"], "completed");
    assert!(dir.path().join("timing.csv").exists());
}

#[test]
fn variant_and_seed_flags_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiltmpc(&[
        "step-pose",
        "--variant",
        "servo_and_thrust",
        "--seed",
        "4",
        "--duration",
        "0.3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(!tiltmpc(&["step-pose", "--variant", "bogus"]).status.success());
}

#[test]
fn sysid_first_order_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("step.csv");
    let mut text = String::from("time,command,response\n");
    for k in 0..=500 {
        let t = k as f64 * 0.002;
        let u = if t >= 0.1 { 1.0 } else { 0.0 };
        let y = if t > 0.1 { 1.0 - (-(t - 0.1) / 0.0859).exp() } else { 0.0 };
        text += &format!("{t},{u},{y}\n");
    }
    std::fs::write(&input, text).unwrap();
    let out = tiltmpc(&["sysid", "--input", input.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    let tau = fit["time_constant"].as_f64().unwrap();
    assert!((tau - 0.0859).abs() / 0.0859 < 0.01, "{tau}");
}
