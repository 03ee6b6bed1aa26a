use std::path::{Path, PathBuf};

use nalgebra::Vector4;
use zodiaq_core::control::{FlatSample, Reference};
use zodiaq_core::scenario::calibrate::{calibrate_thrust, full_thrust, mean_planar_speed, mean_yaw_rate, simple_drag, TOP_SPEED, TOP_YAW_RATE};
use zodiaq_core::scenario::plot::{emit_plots, path_svg, time_series_svg, PlotError};
use zodiaq_core::scenario::*;
use zodiaq_core::timeseries::TimeSeriesLog;

fn shipped() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped_scenarios() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> =
        std::fs::read_dir(shipped().join("scenarios")).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "toml")).collect();
    v.sort();
    v
}

fn simple(kind: ScenarioKind, t_end: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::new("test", kind, t_end);
    c.plant = Plant::SimpleModel;
    c.integrator.dt = 1e-3;
    c
}

#[test]
fn includes_merge_deeply_and_later_keys_win() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("base.toml"), "t_end = 5.0\n[build]\ncg_drop = 0.02\nshell_mass = 8.0\n[control]\nkp = [2.0, 2.0, 2.0, 2.0]\n").unwrap();
    std::fs::write(dir.path().join("more.toml"), "include = 'base.toml'\n[build]\nshell_mass = 8.1\n").unwrap();
    std::fs::write(dir.path().join("run.toml"), "include = ['more.toml']\nname = 'x'\n[build]\ncg_drop = 0.03\n[scenario]\nkind = 'depth-yaw-hold'\n").unwrap();
    let c = ScenarioConfig::load(&dir.path().join("run.toml")).unwrap();
    assert_eq!(c.t_end, 5.0);
    assert_eq!(c.build.cg_drop, 0.03);
    assert_eq!(c.build.shell_mass, 8.1);
    assert_eq!(c.control.kp, [2.0; 4]);
    assert_eq!(c.build.total_mass, 10.75);
}

#[test]
fn include_cycles_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.toml"), "include = 'b.toml'\n").unwrap();
    std::fs::write(dir.path().join("b.toml"), "include = 'a.toml'\n").unwrap();
    assert!(matches!(ScenarioConfig::load(&dir.path().join("a.toml")), Err(ConfigError::IncludeCycle(_))));
}

#[test]
fn unknown_keys_are_rejected() {
    let e = ScenarioConfig::from_toml("name = 'a'\nt_end = 1.0\nspeed = 3\n[scenario]\nkind = 'square'\n").unwrap_err();
    assert!(e.contains("speed"), "{e}");
    let e = ScenarioConfig::from_toml("name = 'a'\nt_end = 1.0\n[scenario]\nkind = 'loop'\n").unwrap_err();
    assert!(e.contains("loop"), "{e}");
}

#[test]
fn shipped_configs_are_valid() {
    let list = shipped_scenarios();
    assert!(list.len() >= 6);
    let mut kinds = std::collections::BTreeSet::new();
    for p in list {
        let c = ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(c.validate().is_empty(), "{}: {:?}", p.display(), c.validate());
        kinds.insert(c.scenario.id());
    }
    assert_eq!(kinds.len(), 6);
}

#[test]
fn same_side_pair_is_diagnosed() {
    let mut c = ScenarioConfig::new("a", ScenarioKind::DepthYawHold { disturbances: Vec::new() }, 1.0);
    c.control.pairs[0] = [1, 3];
    c.control.pairs[1] = [2, 4];
    let d = c.validate();
    assert!(d.iter().any(|d| d.location == "control.pairs[0]" && d.message.contains("antiparallel")), "{d:?}");
}

#[test]
fn negative_modulus_names_the_field() {
    let mut c = ScenarioConfig::new("a", ScenarioKind::DepthYawHold { disturbances: Vec::new() }, 1.0);
    c.build.flagellum.youngs_modulus = -1.0;
    let d = c.validate();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].location, "build.flagellum.youngs_modulus");
}

#[test]
fn cap_above_limit_is_diagnosed() {
    let mut c = ScenarioConfig::new("a", ScenarioKind::DepthYawHold { disturbances: Vec::new() }, 1.0);
    c.control.cap_fraction = 1.2;
    assert!(c.validate().iter().any(|d| d.location == "control.cap_fraction"));
    let mut c = ScenarioConfig::new("a", ScenarioKind::OpenloopFig2c { motors: vec![MotorSpeed { motor: 13, rpm: 200.0 }] }, 1.0);
    c.hydro.shell_added_mass[4] = -1.0;
    let locs: Vec<String> = c.validate().into_iter().map(|d| d.location).collect();
    assert_eq!(locs, ["hydro.shell_added_mass[4]", "scenario.motors[0].motor", "scenario.motors[0].rpm"]);
}

#[test]
fn config_hash_tracks_content() {
    let a = ScenarioConfig::new("a", ScenarioKind::DepthYawHold { disturbances: Vec::new() }, 1.0);
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.control.kp[0] = 1.5;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn semicircle_reference_is_consistent() {
    let r = Semicircle { start: Vector4::new(1.0, -1.0, -0.2, 0.0), radius: 2.0, period: 60.0 };
    check_reference(&r, 60.0).unwrap();
    let end = r.sample(60.0);
    assert!((end.position[0] - 1.0).abs() < 1e-12 && (end.position[1] - 3.0).abs() < 1e-12);
    assert!((r.sample(30.0).rate.norm() - std::f64::consts::PI * 2.0 / 60.0).abs() < 1e-12);
}

struct Inconsistent;

impl Reference for Inconsistent {
    fn sample(&self, t: f64) -> FlatSample {
        FlatSample { position: Vector4::new(0.0, 0.0, t, 0.0), ..FlatSample::default() }
    }
}

#[test]
fn inconsistent_reference_is_caught() {
    assert!(check_reference(&Inconsistent, 10.0).is_err());
}

fn three_samples() -> TimeSeriesLog {
    let mut log =
        TimeSeriesLog::new(["t", "x", "y", "z", "roll", "pitch", "yaw"].map(String::from).into_iter().chain((1..=12).map(|m| format!("w{m}"))).collect());
    for (k, t) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let mut row = vec![t, 0.1 * k as f64, -0.05 * (k * k) as f64, -0.2, 0.01, -0.02 * k as f64, 0.3 * t];
        row.extend((1..=12).map(|m| if m % 3 == 0 { k as f64 } else { 0.0 }));
        log.push(row).unwrap();
    }
    log
}

#[test]
fn plots_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_plots(&three_samples(), "three", dir.path()).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    assert_eq!(files.len(), 3);
    for f in files {
        let name = f.file_name().unwrap();
        let got = std::fs::read_to_string(&f).unwrap();
        let want = std::fs::read_to_string(golden.join(name)).unwrap_or_else(|_| panic!("missing golden {name:?}"));
        assert_eq!(got, want, "{name:?}");
    }
}

#[test]
fn empty_log_cannot_be_plotted() {
    let log = TimeSeriesLog::new(vec!["t".into(), "x".into(), "y".into()]);
    assert!(matches!(path_svg(&log, false), Err(PlotError::Empty)));
    assert!(matches!(time_series_svg(&three_samples(), &[("a", &["nope"])]), Err(PlotError::Log(_))));
}

#[test]
fn reference_path_is_overlaid() {
    let mut c = simple(ScenarioKind::Semicircle { radius: 2.0, period: 60.0, heading_deg: 0.0 }, 2.0);
    c.log_rate = 10.0;
    let out = Prepared::new(c).unwrap().run().unwrap();
    let svg = path_svg(&out.logs[0].1, true).unwrap();
    assert!(svg.contains(">reference</text>") && svg.matches("<polyline").count() == 2);
}

#[test]
fn undisturbed_hold_stays_put_on_both_plants() {
    for plant in [Plant::SimpleModel, Plant::FullTwin] {
        let mut c = simple(ScenarioKind::DepthYawHold { disturbances: Vec::new() }, 3.0);
        c.plant = plant;
        if plant == Plant::FullTwin {
            c.integrator = zodiaq_core::dynamics::IntegratorConfig::implicit(2e-3);
        }
        let out = Prepared::new(c).unwrap().run().unwrap();
        let m = &out.summary.metrics;
        assert!(m["max_depth_error"] < 1e-3 && m["max_yaw_error_deg"] < 1e-3 * 57.3, "{plant:?}: {m:?}");
        assert_eq!(out.summary.actuation.exclusivity_violations, 0);
        assert_eq!(out.summary.actuation.control_ticks, 30);
    }
}

#[test]
fn simple_runs_are_byte_identical() {
    let mut c = simple(
        ScenarioKind::DepthYawHold { disturbances: vec![Disturbance { start: 1.0, duration: 0.5, force: [0.2, 0.0, -0.1], moment: [0.0, 0.0, 0.01] }] },
        10.0,
    );
    c.initial.velocity_jitter = 0.01;
    c.seed = 7;
    let bytes = |c: &ScenarioConfig| {
        let out = Prepared::new(c.clone()).unwrap().run().unwrap();
        let mut v = Vec::new();
        out.logs[0].1.write_csv(&mut v).unwrap();
        v
    };
    let a = bytes(&c);
    assert_eq!(a, bytes(&c));
    c.seed = 8;
    assert_ne!(a, bytes(&c));
}

#[test]
fn disturbance_is_rejected_by_the_hold() {
    let c = simple(
        ScenarioKind::DepthYawHold { disturbances: vec![Disturbance { start: 1.0, duration: 0.5, force: [0.0, 0.0, -0.1], moment: [0.0, 0.0, 0.005] }] },
        40.0,
    );
    let out = Prepared::new(c).unwrap().run().unwrap();
    let m = &out.summary.metrics;
    assert!(m["max_depth_error"] > 1e-3 && m["max_yaw_error_deg"] > 0.1, "{m:?}");
    assert!(m["final_depth_error"].abs() < 0.2 * m["max_depth_error"], "{m:?}");
    assert!(m["final_yaw_error_deg"].abs() < 0.2 * m["max_yaw_error_deg"], "{m:?}");
}

#[test]
fn outcome_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = Prepared::new(simple(ScenarioKind::DepthYawHold { disturbances: Vec::new() }, 1.0)).unwrap().run().unwrap();
    let files = out.write(dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let log = TimeSeriesLog::load_csv(&dir.path().join("test.csv")).unwrap();
    assert_eq!(log, out.logs[0].1);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("test.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    let assumed = summary["assumed"].as_array().unwrap();
    assert!(assumed.iter().any(|a| a["name"] == "control.thrust_coefficient" && a["provenance"] == "calibrated"));
    assert!(assumed.iter().any(|a| a["name"] == "build.total_mass" && a["provenance"] == "reported"));
}

#[test]
fn shell_only_top_speeds_hit_the_targets() {
    let c = ScenarioConfig::new("a", ScenarioKind::DepthYawHold { disturbances: Vec::new() }, 1.0);
    let model = controller_model(&c).unwrap();
    let (_, _, drag) = simple_drag(&model);
    for (k, d) in drag.iter().enumerate() {
        assert!((d / c.control.drag[k] - 1.0).abs() < 0.01, "control.drag[{k}] {} vs {d}", c.control.drag[k]);
    }
    for (axis, target) in [(3, TOP_SPEED), (2, TOP_YAW_RATE)] {
        let mut oc = simple(ScenarioKind::OpenloopFig2c { motors: Vec::new() }, 60.0);
        let (omega, _) = full_thrust(&model, axis).unwrap();
        oc.scenario = ScenarioKind::OpenloopFig2c {
            motors: omega
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| MotorSpeed { motor: i + 1, rpm: w / zodiaq_core::dynamics::RPM })
                .collect(),
        };
        let out = Prepared::new(oc).unwrap().run().unwrap();
        let got = if axis == 3 { mean_planar_speed(&out.logs[0].1, 10.0) } else { mean_yaw_rate(&out.logs[0].1, 10.0).abs() };
        assert!((got / target - 1.0).abs() < 0.25, "axis {axis}: {got} vs {target}");
    }
}

#[test]
fn thrust_calibration_reproduces_the_defaults() {
    let c = ScenarioConfig::new("a", ScenarioKind::DepthYawHold { disturbances: Vec::new() }, 1.0);
    let cal = calibrate_thrust(&c, 1, c.control.cap(), 3.0, 3.0).unwrap();
    assert!((cal.thrust_coefficient / c.control.thrust_coefficient - 1.0).abs() < 0.01, "{cal:?}");
    assert!((cal.reaction_coefficient / c.control.reaction_coefficient - 1.0).abs() < 0.01, "{cal:?}");
}

#[test]
fn open_loop_runs_log_motors_without_controller_columns() {
    let mut c = ScenarioConfig::new("open", ScenarioKind::OpenloopFig2c { motors: [6, 8, 9, 11].map(|motor| MotorSpeed { motor, rpm: 60.0 }).to_vec() }, 0.3);
    c.integrator = zodiaq_core::dynamics::IntegratorConfig::implicit(2e-3);
    let out = Prepared::new(c).unwrap().run().unwrap();
    let log = &out.logs[0].1;
    assert!(!log.has("ref_x") && !log.has("cmd1"));
    let target = 60.0 * std::f64::consts::PI / 30.0;
    for m in [6, 8, 9, 11] {
        assert!((log.last(&format!("w{m}")).unwrap().abs() - target).abs() < 1e-9);
    }
    assert_eq!(log.last("w1").unwrap(), 0.0);
    assert_eq!(out.summary.actuation.control_ticks, 0);
}
