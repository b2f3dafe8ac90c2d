use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_dispersive-control");

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn run_cmd(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary should launch")
}

#[test]
fn malformed_config_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "{ not json");
    let out = run_cmd("spectrum", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let cfg = write_config(tmp.path(), r#"{"n_modes": 8, "no_such_field": 1}"#);
    let out = run_cmd("spectrum", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));

    // alpha >= 0 violates the dispersion-sign requirement.
    let cfg = write_config(
        tmp.path(),
        r#"{"params": {"alpha": 1.0, "a": 1.0, "b": 0.2, "c": 0.2, "d": 1.0,
                      "mu": 0.0, "eta": 0.0, "zeta": 0.0}}"#,
    );
    let out = run_cmd("spectrum", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spectrum_outputs_are_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"n_modes": 8}"#);
    let out_dir = tmp.path().join("out");
    let out = run_cmd("spectrum", &cfg, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let spectrum = fs::read_to_string(out_dir.join("spectrum.csv")).unwrap();
    let mut rows = spectrum.lines();
    let header = rows.next().unwrap();
    assert!(header.starts_with("k,omega_plus,omega_minus"));
    assert_eq!(rows.count(), 17, "one row per mode in |k| <= 8");
    // The k = 0 row carries the double zero frequency.
    let zero_row = spectrum
        .lines()
        .find(|l| l.starts_with("0,"))
        .expect("k = 0 row present");
    let cols: Vec<&str> = zero_row.split(',').collect();
    assert_eq!(cols[1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "spectrum");
    assert_eq!(manifest["config"]["n_modes"], 8);
    let clusters: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("clusters.json")).unwrap()).unwrap();
    assert!(clusters["min_gap"].as_f64().unwrap() > 0.0);
    assert!(fs::read_to_string(out_dir.join("gaps.csv")).unwrap().lines().count() > 1);
}

#[test]
fn resonance_table_matches_hand_checked_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"resonance": {"n_min": 2, "n_max": 5}}"#,
    );
    let out_dir = tmp.path().join("out");
    let out = run_cmd("resonance", &cfg, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("delta.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(first[0], "2");
    // Hand-enumerated minimum over the admissible zero-sum triples at N=2.
    assert!((first[1].parse::<f64>().unwrap() - 4.5).abs() <= 1e-12);
}

const LINEAR_CONFIG: &str = r#"{
  "n_modes": 8,
  "dt": 0.00025,
  "t_horizon": 1.0,
  "initial": {"type": "random-band", "kmax": 6, "decay": 1.5, "amplitude": 1.0},
  "target": {"type": "random-band", "kmax": 6, "decay": 1.5, "amplitude": 1.0}
}"#;

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), LINEAR_CONFIG);
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    for dir in [&dir_a, &dir_b] {
        let out = run_cmd("control-linear", &cfg, dir, &["--seed", "7"]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["trajectory.csv", "control.csv", "plan.json", "result.json", "manifest.json"] {
        let a = fs::read(dir_a.join(name)).unwrap();
        let b = fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // A different seed draws different data, hence a different plan.
    let dir_c = tmp.path().join("c");
    let out = run_cmd("control-linear", &cfg, &dir_c, &["--seed", "8"]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(
        fs::read(dir_a.join("plan.json")).unwrap(),
        fs::read(dir_c.join("plan.json")).unwrap()
    );
}

#[test]
fn linear_control_verifies_its_own_terminal_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), LINEAR_CONFIG);
    let out_dir = tmp.path().join("out");
    let out = run_cmd("control-linear", &cfg, &out_dir, &["--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    let rel = result["terminal_error_rel"].as_f64().unwrap();
    assert!(rel <= 1e-3, "terminal relative error {rel:.3e}");
    assert!(result["gram_condition"].as_f64().unwrap() >= 1.0);
    assert!(result["beta_floor"].as_f64().unwrap() > 0.0);
    // RFC 4180 sanity on the exported series: constant column count.
    let csv = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let cols = csv.lines().next().unwrap().split(',').count();
    for line in csv.lines() {
        assert_eq!(line.split(',').count(), cols);
    }
}

#[test]
fn stabilize_reports_monotone_decay() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
          "n_modes": 8,
          "dt": 0.001,
          "t_end": 3.0,
          "lambda": 0.0,
          "initial": {"type": "random-band", "kmax": 6, "decay": 1.5, "amplitude": 1.0}
        }"#,
    );
    let out_dir = tmp.path().join("out");
    let out = run_cmd("stabilize", &cfg, &out_dir, &["--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["monotone_energy"], true);
    assert!(result["kappa"].as_f64().unwrap() > 0.0);
    assert!(
        result["final_energy"].as_f64().unwrap() < result["initial_energy"].as_f64().unwrap()
    );
}

#[test]
fn empty_gain_with_positive_lambda_is_a_solver_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
          "n_modes": 4,
          "lambda": 0.5,
          "t_end": 0.1,
          "gain": {"type": "empty"},
          "initial": {"type": "random-band", "kmax": 4, "decay": 1.5, "amplitude": 0.1}
        }"#,
    );
    let out = run_cmd("stabilize", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn runaway_closed_loop_exits_with_blowup_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
          "n_modes": 8,
          "dt": 0.1,
          "t_end": 10.0,
          "lambda": 0.0,
          "initial": {"type": "random-band", "kmax": 6, "decay": 1.5, "amplitude": 10000.0}
        }"#,
    );
    let out = run_cmd("stabilize", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn global_steer_refuses_large_targets() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
          "n_modes": 8,
          "initial": {"type": "zero"},
          "target": {"type": "random-band", "kmax": 6, "decay": 1.5, "amplitude": 1.0}
        }"#,
    );
    let out = run_cmd("global-steer", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(
        out.status.code(),
        Some(5),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn control_nonlinear_converges_on_small_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
          "n_modes": 8,
          "dt": 0.001,
          "t_horizon": 1.0,
          "initial": {"type": "random-band", "kmax": 6, "decay": 1.5, "amplitude": 0.001},
          "target": {"type": "random-band", "kmax": 6, "decay": 1.5, "amplitude": 0.001}
        }"#,
    );
    let out_dir = tmp.path().join("out");
    let out = run_cmd("control-nonlinear", &cfg, &out_dir, &["--seed", "2"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["report"]["converged"], true);
    assert!(result["report"]["terminal_error"].as_f64().unwrap() <= 1e-6);
    assert!(out_dir.join("iterates.csv").exists());
}

#[test]
fn config_round_trips_through_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), LINEAR_CONFIG);
    let out_dir = tmp.path().join("out");
    let out = run_cmd("spectrum", &cfg, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(0));
    // The manifest embeds the full effective config; feeding it back in
    // reproduces the outputs byte for byte.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let cfg2 = tmp.path().join("config2.json");
    fs::write(&cfg2, serde_json::to_string(&manifest["config"]).unwrap()).unwrap();
    let out_dir2 = tmp.path().join("out2");
    let out = run_cmd("spectrum", &cfg2, &out_dir2, &[]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(out_dir.join("spectrum.csv")).unwrap(),
        fs::read(out_dir2.join("spectrum.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out_dir.join("clusters.json")).unwrap(),
        fs::read(out_dir2.join("clusters.json")).unwrap()
    );
}
