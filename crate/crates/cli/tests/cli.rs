use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn zodiaq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zodiaq"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn short_simple_config(dir: &Path) -> PathBuf {
    let path = dir.join("short.toml");
    let text = format!(
        "include = {:?}\nname = \"short\"\nplant = \"simple-model\"\nt_end = 2.0\n\n[integrator]\nkind = \"rk4\"\ndt = 1e-3\n\n[scenario]\nkind = \"depth-yaw-hold\"\n",
        configs().join("params/default.toml").to_string_lossy()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let out = zodiaq().arg("validate").arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("ok"));
    }
}

#[test]
fn invalid_config_exits_with_two_and_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = format!(
        "include = {:?}\nname = \"bad\"\nt_end = 1.0\n\n[control]\ncap_fraction = 1.5\n\n[scenario]\nkind = \"crawl-pattern\"\nmotors = [{{ motor = 13, rpm = 60.0 }}]\n",
        configs().join("params/default.toml").to_string_lossy()
    );
    std::fs::write(&path, text).unwrap();
    let out = zodiaq().arg("validate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report = stdout(&out);
    assert!(report.contains("control.cap_fraction"), "{report}");
    assert!(report.contains("scenario.motors[0].motor"), "{report}");
}

#[test]
fn unreadable_config_exits_with_two() {
    let out = zodiaq().arg("run").arg("/nonexistent/config.toml").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_log_summary_and_plots_under_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_simple_config(dir.path());
    let root = dir.path().join("runs");
    let out = zodiaq().arg("run").arg(&config).arg("--plots").env("ZODIAQ_OUTPUT_DIR", &root).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["short.csv", "short.summary.json", "short-pose.svg", "short-motors.svg", "short-path.svg"] {
        assert!(root.join("short").join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("short/short.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scenario"], "depth-yaw-hold");
    assert_eq!(summary["plant"], "simple-model");
    assert_eq!(summary["actuation"]["exclusivity_violations"], 0);
}

#[test]
fn batch_runs_every_scenario_in_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    short_simple_config(dir.path());
    let root = dir.path().join("runs");
    let out = zodiaq().args(["batch", "--jobs", "2"]).arg(dir.path()).env("ZODIAQ_OUTPUT_DIR", &root).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("short/short.csv").is_file());
}

#[test]
fn plot_rejects_an_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.csv");
    std::fs::write(&log, "t,x,y,z\n").unwrap();
    let out = zodiaq().arg("plot").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plot_redraws_a_written_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_simple_config(dir.path());
    let run_dir = dir.path().join("out");
    let out = zodiaq().arg("run").arg(&config).arg("--out").arg(&run_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let plots = dir.path().join("plots");
    let out = zodiaq().arg("plot").arg(run_dir.join("short.csv")).arg("--out").arg(&plots).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(plots.join("short-path.svg").is_file());
}

#[test]
fn dump_geometry_lists_twelve_faces() {
    let out = zodiaq().arg("dump-geometry").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let faces = v["faces"].as_array().unwrap();
    assert_eq!(faces.len(), 12);
    for f in faces {
        let n: Vec<f64> = f["normal"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((n.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f["spin"].as_f64().unwrap().abs() == 1.0);
    }
    assert_eq!(v["pairs"].as_array().unwrap().len(), 6);
    assert!(v["allocation_condition"].as_f64().unwrap() < 100.0);
}
