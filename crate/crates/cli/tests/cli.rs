use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cable-follow"));
    cmd.env_remove("CABLE_FOLLOW_CONFIG");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A config with a short cable so grid commands finish quickly.
fn short_config(dir: &Path) -> PathBuf {
    let path = dir.join("short.json");
    std::fs::write(&path, r#"{ "corpus": { "length_mm": 300.0 }, "experiments": { "seeds": [0, 1] } }"#).unwrap();
    path
}

fn fitted_model(dir: &Path) -> PathBuf {
    let out = run(dir, &["sysid", "--out", "sysid"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("sysid/model.json")
}

#[test]
fn help_lists_every_command() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for cmd in ["sysid", "run", "compare", "sweep-velocity", "sweep-cables", "render-frame"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn lqr_without_a_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["run", "--controller", "lqr"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--model"));
}

#[test]
fn bad_configs_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--config", "missing.json", "run", "--controller", "p"]);
    assert_eq!(code(&out), 2);

    std::fs::write(dir.path().join("bad.json"), r#"{ "episode": { "v_x": -1.0 } }"#).unwrap();
    let out = run(dir.path(), &["--config", "bad.json", "run", "--controller", "p"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let out = run(dir.path(), &["--config", "broken.json", "run", "--controller", "p"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let out = run(dir.path(), &["run", "--controller", "bang_bang"]);
    assert_eq!(code(&out), 2);

    let out = run(dir.path(), &["run", "--controller", "p", "--cable", "garden_hose"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_path_is_read_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env("CABLE_FOLLOW_CONFIG", "nowhere.json")
        .args(["run", "--controller", "p"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.json"));
}

#[test]
fn unexcited_identification_is_a_fit_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{ "sysid": { "waviness_mm": 0.0, "collect": {
        "init_y_mm": 0.0, "init_theta_deg": 0.0, "init_alpha_deg": 0.0,
        "p_gain": { "noise_low": 0.0, "noise_high": 0.0 } } } }"#;
    std::fs::write(dir.path().join("flat.json"), cfg).unwrap();
    let out = run(dir.path(), &["--config", "flat.json", "sysid", "--out", "m"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("fit failed"));
}

#[test]
fn sysid_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run(dir.path(), &["sysid", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in ["model.json", "dataset.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert!(manifest["command"].as_str().unwrap().contains("sysid"));
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 1);
    assert!(manifest["config"]["lqr"].is_object());
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn run_reports_metrics_that_match_its_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let model = fitted_model(dir.path());
    let out = run(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "run", "--controller", "lqr", "--model", model.to_str().unwrap(), "--seed", "2"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/run/metrics.json")).unwrap()).unwrap();
    let ratio = metrics["ratio_followed"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ratio));
    assert!(stdout(&out).contains(&format!("ratio_followed: {ratio:.6}")));

    let trace = std::fs::read_to_string(dir.path().join("out/run/trace.csv")).unwrap();
    let header: Vec<&str> = trace.lines().next().unwrap().split(',').collect();
    let s_col = header.iter().position(|h| *h == "s").unwrap();
    let last_s: f64 = trace.lines().last().unwrap().split(',').nth(s_col).unwrap().parse().unwrap();
    let followed = metrics["followed_mm"].as_f64().unwrap();
    assert!(last_s >= followed - 1e-9);
    assert!((ratio - followed / 300.0).abs() < 1e-9);
}

#[test]
fn compare_writes_the_summary_table_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let model = fitted_model(dir.path());
    let out = run(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            "1",
            "compare",
            "--model",
            model.to_str().unwrap(),
            "--out",
            "cmp",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = std::fs::read_to_string(dir.path().join("cmp/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "controller,ratio_mean,ratio_std,dist_per_regrasp_mean,dist_per_regrasp_std,vel_norm_mean,vel_norm_std"
    );
    assert_eq!(lines.len(), 5);
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["open_loop", "open_loop_regrasp", "p_control", "lqr_control"]);
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 7);
    }
    let results = std::fs::read_to_string(dir.path().join("cmp/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 4 * 2);
    let png = std::fs::read(dir.path().join("cmp/summary.png")).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    let traces = std::fs::read_dir(dir.path().join("cmp/traces")).unwrap().count();
    assert_eq!(traces, 8);
}

#[test]
fn render_frame_writes_images_and_estimates_the_pose() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["render-frame", "--y-mm", "1.5", "--theta-deg", "-10", "--out", "f"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let pgm = std::fs::read(dir.path().join("f/depth.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
    assert!(dir.path().join("f/depth.png").exists());
    let markers = std::fs::read_to_string(dir.path().join("f/markers.csv")).unwrap();
    assert_eq!(markers.lines().count(), 1 + 48);
    let text = stdout(&out);
    let line = text.lines().find(|l| l.starts_with("estimated y:")).expect("pose line");
    let y: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((y - 1.5).abs() < 0.5, "{line}");
}

#[test]
fn shipped_default_config_matches_the_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let shipped = cable_follow::harness::Config::load(&path).unwrap();
    assert_eq!(shipped, cable_follow::harness::Config::default());
}
