use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 5

[detector]
v_e_set = 15.0

[source]
rate = 2e5
duration = 0.02

[lut]
v_e = [14.0, 16.0]
input_rates = { min = 1e3, max = 1e7, count = 8 }
events_per_cell = 5000

[fringe]
angles = [0.0, 22.5, 45.0, 67.5, 90.0, 112.5, 135.0, 157.5]
tau1 = 1e-7
tau2 = 1e-7
duration_per_angle = 0.05

[fringe.source]
pair_rate = 18000.0
singles_background_1 = 60000.0
singles_background_2 = 60000.0
true_visibility = 0.99
phase_deg = 0.0
"#;

fn gmapd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmapd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn workdir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture() -> String {
    format!("{}/tests/fixtures/lut_2x2.json", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn simulate_detector_smoke_and_determinism() {
    let (dir, cfg) = workdir();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = gmapd(&["simulate-detector", "--config", s(&cfg), "--out", s(&out), "--json"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (stdout(&o), fs::read(out).unwrap())
    };
    let (summary, trace) = run("a.csv");
    for key in ["eta_fractional", "eta_area", "observed_rate"] {
        assert!(summary.contains(key), "{summary}");
    }
    assert_eq!(run("b.csv"), (summary, trace));
}

#[test]
fn seed_flag_overrides_config() {
    let (dir, cfg) = workdir();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(gmapd(&["generate-events", "--config", s(&cfg), "--out", s(&a)])
        .status
        .success());
    assert!(
        gmapd(&["generate-events", "--config", s(&cfg), "--out", s(&b), "--seed", "6"])
            .status
            .success()
    );
    assert_ne!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn missing_config_fails_closed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = gmapd(&[
        "simulate-detector",
        "--config",
        "/nonexistent/run.toml",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_config_key_is_rejected() {
    let (dir, cfg) = workdir();
    fs::write(&cfg, format!("{CONFIG}\n[detector2]\nvee = 3.0\n")).unwrap();
    let out = dir.path().join("trace.csv");
    let o = gmapd(&["simulate-detector", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vee"));
    assert!(!out.exists());
}

#[test]
fn build_lut_independent_of_job_count() {
    let (dir, cfg) = workdir();
    let one = dir.path().join("one.json");
    let four = dir.path().join("four.json");
    let csv = dir.path().join("one.csv");
    let o = gmapd(&[
        "build-lut",
        "--config",
        s(&cfg),
        "--out",
        s(&one),
        "--csv",
        s(&csv),
        "--jobs",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(
        gmapd(&["build-lut", "--config", s(&cfg), "--out", s(&four), "--jobs", "4"])
            .status
            .success()
    );
    assert_eq!(fs::read(&one).unwrap(), fs::read(&four).unwrap());
    assert!(fs::read_to_string(csv).unwrap().starts_with("v_e,observed_rate,eta\n"));
}

#[test]
fn lookup_exact_on_nodes_and_fails_past_the_table() {
    let lut = fixture();
    let o = gmapd(&["lookup", "--lut", &lut, "--ve", "16", "--rate", "1e5"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 0.85);
    let o = gmapd(&["lookup", "--lut", &lut, "--ve", "16", "--rate", "1e6"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
}

#[test]
fn lookup_reports_saturation_ambiguity() {
    let (dir, cfg) = workdir();
    let lut = dir.path().join("t.json");
    assert!(gmapd(&["build-lut", "--config", s(&cfg), "--out", s(&lut)])
        .status
        .success());
    let o = gmapd(&["lookup", "--lut", s(&lut), "--ve", "15", "--rate", "5e7"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ambiguous") || err.contains("outside"), "{err}");
}

fn correct_json(extra: &[&str]) -> serde_json::Value {
    let mut args = vec![
        "correct", "--s1", "1e5", "--s2", "8e4", "--tau1", "5e-8", "--tau2", "4e-8", "--craw", "2500", "--json",
    ];
    args.extend_from_slice(extra);
    let o = gmapd(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn correct_with_unit_duty_cycle_equals_naive() {
    let r = correct_json(&["--eta1", "1", "--eta2", "1"]);
    assert_eq!(r["c_acc_naive"], r["c_acc_corrected"]);
    let r = correct_json(&["--lut1", &fixture(), "--ve1", "15", "--ve2", "14"]);
    assert!(r["c_acc_corrected"].as_f64().unwrap() > r["c_acc_naive"].as_f64().unwrap());
}

#[test]
fn correct_names_the_failing_arm() {
    let o = gmapd(&[
        "correct",
        "--lut1",
        &fixture(),
        "--s1",
        "1e4",
        "--s2",
        "1e4",
        "--tau1",
        "5e-8",
        "--tau2",
        "5e-8",
        "--craw",
        "10",
        "--ve1",
        "15",
        "--ve2",
        "20",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("detector 2"));
}

#[test]
fn fringe_pipeline_end_to_end() {
    let (dir, cfg) = workdir();
    let lut = dir.path().join("t.json");
    let data = dir.path().join("f.csv");
    let report = dir.path().join("fit.json");
    assert!(gmapd(&["build-lut", "--config", s(&cfg), "--out", s(&lut)])
        .status
        .success());
    let o = gmapd(&["generate-fringes", "--config", s(&cfg), "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = gmapd(&[
        "fit-visibility",
        "--data",
        s(&data),
        "--lut1",
        s(&lut),
        "--out",
        s(&report),
        "--json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let vis = |k: &str| v[k]["visibility"].as_f64().unwrap();
    assert!(vis("fit_raw") < vis("fit_naive") && vis("fit_naive") < vis("fit_corrected"));
    assert_eq!(fs::read_to_string(&report).unwrap().trim(), stdout(&o).trim());
}

#[test]
fn fit_visibility_rejects_bad_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("f.csv");
    fs::write(
        &data,
        "angle_deg,c_raw_counts,s1_counts,s2_counts,integration_s\n0,1,1,1,1\n",
    )
    .unwrap();
    let o = gmapd(&["fit-visibility", "--data", s(&data), "--lut1", &fixture()]);
    assert_eq!(o.status.code(), Some(3));
}
