//! Scenario configs, runs, logs and summaries.

pub mod calibrate;
mod config;
pub mod plot;

pub use config::*;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::control::{
    simple_step, ControlError, Decision, FlatController, FlatSample, Gains, RateFilter, Reference, SimpleModel, SimpleState, DECISION_COLUMNS,
};
use crate::dynamics::{simulate, DynamicsError, Model, MotorProgram, SimulationConfig, Supervisor, RPM, SHELL_COLUMNS};
use crate::kinematics::zodiaq::{assemble_zodiaq, ZodiaqParams, PAIRS};
use crate::kinematics::{AssemblyError, GeneralizedState};
use crate::se3::{wrap_angle, Wrench};
use crate::timeseries::{LogError, TimeSeriesLog, CSV_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("assembly: {0}")]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("reference trajectory: {0}")]
    Reference(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// Whether the failure lies in the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Assembly(_) | Self::Reference(_))
            || matches!(self, Self::Control(ControlError::Pair { .. } | ControlError::SingularAllocation { .. }))
    }
}

/// Constant reference, used to hold depth and heading.
pub struct Hold(pub Vector4<f64>);

impl Reference for Hold {
    fn sample(&self, _t: f64) -> FlatSample {
        FlatSample { position: self.0, ..FlatSample::default() }
    }
}

/// Half circle of the given radius starting tangent to +x, then a hold at its end.
pub struct Semicircle {
    pub start: Vector4<f64>,
    pub radius: f64,
    pub period: f64,
}

impl Reference for Semicircle {
    fn sample(&self, t: f64) -> FlatSample {
        let w = std::f64::consts::PI / self.period;
        let (r, s) = (self.radius, t.min(self.period));
        let moving = if t < self.period { 1.0 } else { 0.0 };
        let (sn, cs) = (w * s).sin_cos();
        let mut position = self.start;
        position[0] += r * sn;
        position[1] += r * (1.0 - cs);
        FlatSample {
            position,
            rate: Vector4::new(r * w * cs, r * w * sn, 0.0, 0.0) * moving,
            accel: Vector4::new(-r * w * w * sn, r * w * w * cs, 0.0, 0.0) * moving,
            planar_open_loop: false,
        }
    }
}

/// Open-loop planar acceleration along a sequence of directions, one per
/// leg, with depth and heading held.
pub struct PlanarLegs {
    pub hold: Vector4<f64>,
    pub legs: Vec<[f64; 2]>,
    pub leg_duration: f64,
    pub acceleration: f64,
}

impl PlanarLegs {
    pub fn leg(&self, t: f64) -> usize {
        ((t / self.leg_duration).floor() as usize) % self.legs.len()
    }
}

impl Reference for PlanarLegs {
    fn sample(&self, t: f64) -> FlatSample {
        let d = self.legs[self.leg(t)];
        let n = d[0].hypot(d[1]);
        let a = self.acceleration / n;
        FlatSample { position: self.hold, accel: Vector4::new(a * d[0], a * d[1], 0.0, 0.0), planar_open_loop: true, ..FlatSample::default() }
    }
}

/// Spot-checks that rates and accelerations of a reference are the
/// derivatives of its positions.
pub fn check_reference(r: &dyn Reference, t_end: f64) -> Result<(), String> {
    let h = 1e-5;
    for k in 0..7 {
        let t = (k as f64 + 0.37) / 7.0 * t_end;
        let (a, m, b) = (r.sample(t - h), r.sample(t), r.sample(t + h));
        let axes = if m.planar_open_loop { 2..4 } else { 0..4 };
        for i in axes {
            let rate = (b.position[i] - a.position[i]) / (2.0 * h);
            let accel = (b.rate[i] - a.rate[i]) / (2.0 * h);
            if (rate - m.rate[i]).abs() > 1e-5 * (1.0 + m.rate[i].abs()) || (accel - m.accel[i]).abs() > 1e-5 * (1.0 + m.accel[i].abs()) {
                return Err(format!("derivatives of output {i} disagree with finite differences at t = {t}"));
            }
        }
    }
    Ok(())
}

/// Commands of the controller over a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Actuation {
    pub control_ticks: usize,
    pub saturated_ticks: usize,
    pub max_command: f64,
    pub max_motor_speed: f64,
    pub cap: f64,
    pub exclusivity_violations: usize,
}

impl Actuation {
    fn record(&mut self, d: &Decision) {
        self.control_ticks += 1;
        if d.allocation.saturated > 0 {
            self.saturated_ticks += 1;
        }
        for w in d.allocation.omega {
            self.max_command = self.max_command.max(w.abs());
        }
        for (a, b) in PAIRS {
            if d.allocation.omega[a - 1] * d.allocation.omega[b - 1] != 0.0 {
                self.exclusivity_violations += 1;
            }
        }
    }

    fn merge(&mut self, o: &Actuation) {
        self.control_ticks += o.control_ticks;
        self.saturated_ticks += o.saturated_ticks;
        self.max_command = self.max_command.max(o.max_command);
        self.max_motor_speed = self.max_motor_speed.max(o.max_motor_speed);
        self.exclusivity_violations += o.exclusivity_violations;
    }
}

fn disturbance_at(list: &[Disturbance], t: f64) -> Wrench<f64> {
    list.iter()
        .filter(|d| t >= d.start && t < d.start + d.duration)
        .fold(Wrench::zero(), |w, d| w + Wrench::new(Vector3::from(d.moment), Vector3::from(d.force)))
}

struct TwinSupervisor<'a> {
    controller: Option<(&'a FlatController, &'a dyn Reference)>,
    period: f64,
    disturbances: &'a [Disturbance],
    last: Vec<f64>,
    filter: RateFilter,
    actuation: Actuation,
}

impl Supervisor for TwinSupervisor<'_> {
    fn control_period(&self) -> Option<f64> {
        self.controller.map(|_| self.period)
    }

    fn control(&mut self, t: f64, state: &GeneralizedState<f64>, motors: &mut MotorProgram) -> Result<(), DynamicsError> {
        let Some((c, r)) = self.controller else { return Ok(()) };
        let s = SimpleState::from_twin(state, &c.model.com);
        let d = c.decide(&self.filter.smooth(&s), r.sample(t));
        self.actuation.record(&d);
        self.last = d.values(&s);
        motors.command_all(t, &d.allocation.omega)
    }

    fn root_wrench(&self, t: f64) -> Wrench<f64> {
        disturbance_at(self.disturbances, t)
    }

    fn columns(&self) -> Vec<String> {
        match self.controller {
            Some(_) => DECISION_COLUMNS.iter().map(|s| s.to_string()).collect(),
            None => Vec::new(),
        }
    }

    fn values(&self) -> Vec<f64> {
        self.last.clone()
    }
}

/// A scenario with its plant, controller and reference prepared.
pub struct Prepared {
    pub config: ScenarioConfig,
    pub controller: FlatController,
}

fn twin_model(build: &ZodiaqParams, cfg: &ScenarioConfig) -> Result<Model<f64>, RunError> {
    Ok(Model::new(assemble_zodiaq::<f64>(build)?, cfg.hydro.dynamics()))
}

/// Shell-only model of the configured build (the controller's view).
pub fn controller_model(cfg: &ScenarioConfig) -> Result<SimpleModel, RunError> {
    let twin = twin_model(&cfg.build, cfg)?;
    Ok(SimpleModel::from_twin(&cfg.build, &twin, &cfg.control)?)
}

/// Resting state of the full model with the configured offsets.
pub fn initial_state(model: &Model<f64>, cfg: &ScenarioConfig) -> Result<GeneralizedState<f64>, RunError> {
    let mut s = model.equilibrium(&GeneralizedState::zeros(model.asm.dof()), 1e-10)?;
    let i = &cfg.initial;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for k in 0..3 {
        s.q[k] += i.attitude_deg[k].to_radians();
        s.q[k + 3] += i.position[k];
        s.qdot[k + 3] += i.velocity[k];
    }
    if i.velocity_jitter > 0.0 {
        for k in 0..6 {
            s.qdot[k] += i.velocity_jitter * rng.random_range(-1.0..1.0);
        }
    }
    Ok(s)
}

fn simple_initial(model: &SimpleModel, cfg: &ScenarioConfig) -> SimpleState {
    let mut q = DVector::zeros(6);
    let mut qd = DVector::zeros(6);
    let i = &cfg.initial;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for k in 0..3 {
        q[k] = i.attitude_deg[k].to_radians();
        q[k + 3] = i.position[k];
        qd[k + 3] = i.velocity[k];
    }
    if i.velocity_jitter > 0.0 {
        for k in 0..6 {
            qd[k] += i.velocity_jitter * rng.random_range(-1.0..1.0);
        }
    }
    SimpleState::from_twin(&GeneralizedState { q, qdot: qd }, &model.com)
}

fn open_loop_speeds(list: &[MotorSpeed]) -> [f64; 12] {
    let mut w = [0.0; 12];
    for m in list {
        w[m.motor - 1] = m.rpm * RPM;
    }
    w
}

fn reference_for(cfg: &ScenarioConfig, start: Vector4<f64>) -> Option<Box<dyn Reference>> {
    match &cfg.scenario {
        ScenarioKind::OpenloopFig2c { .. } | ScenarioKind::CrawlPattern { .. } => None,
        ScenarioKind::DepthYawHold { .. } => Some(Box::new(Hold(start))),
        ScenarioKind::Semicircle { radius, period, heading_deg } => {
            let mut s = start;
            s[3] = heading_deg.to_radians();
            Some(Box::new(Semicircle { start: s, radius: *radius, period: *period }))
        }
        ScenarioKind::Square { leg_duration, acceleration, legs } => {
            Some(Box::new(PlanarLegs { hold: start, legs: legs.clone(), leg_duration: *leg_duration, acceleration: *acceleration }))
        }
        ScenarioKind::Redundancy { leg_duration, acceleration, direction, .. } => {
            Some(Box::new(PlanarLegs { hold: start, legs: vec![*direction], leg_duration: *leg_duration, acceleration: *acceleration }))
        }
    }
}

fn disturbances(cfg: &ScenarioConfig) -> &[Disturbance] {
    match &cfg.scenario {
        ScenarioKind::DepthYawHold { disturbances } => disturbances,
        _ => &[],
    }
}

fn open_motors(cfg: &ScenarioConfig) -> &[MotorSpeed] {
    match &cfg.scenario {
        ScenarioKind::OpenloopFig2c { motors } | ScenarioKind::CrawlPattern { motors } => motors,
        _ => &[],
    }
}

fn max_motor_speed(log: &TimeSeriesLog) -> f64 {
    (1..=12).filter_map(|m| log.column(&format!("w{m}")).ok()).flatten().fold(0.0, |a: f64, w| a.max(w.abs()))
}

fn run_twin(cfg: &ScenarioConfig, plant_build: &ZodiaqParams, controller: &FlatController) -> Result<(TimeSeriesLog, Actuation), RunError> {
    let model = twin_model(plant_build, cfg)?;
    let init = initial_state(&model, cfg)?;
    let start = SimpleState::from_twin(&init, &controller.model.com).flat();
    let reference = reference_for(cfg, start);
    if let Some(r) = &reference {
        check_reference(r.as_ref(), cfg.t_end).map_err(RunError::Reference)?;
    }
    let mut motors = MotorProgram::new(0.05, cfg.omega_max());
    motors.command_all(0.0, &open_loop_speeds(open_motors(cfg)))?;
    let mut sup = TwinSupervisor {
        controller: reference.as_deref().map(|r| (controller, r)),
        period: cfg.control_period(),
        disturbances: disturbances(cfg),
        last: vec![0.0; if reference.is_some() { DECISION_COLUMNS.len() } else { 0 }],
        filter: RateFilter::new(cfg.control.rate_filter, cfg.control_period()),
        actuation: Actuation { cap: controller.model.cap, ..Actuation::default() },
    };
    let sim_cfg = SimulationConfig { integrator: cfg.integrator, t_end: cfg.t_end, log_rate: cfg.log_rate, log_coordinates: false };
    let sim = simulate(&model, init, motors, &mut sup, &sim_cfg)?;
    let mut actuation = sup.actuation;
    actuation.max_motor_speed = max_motor_speed(&sim.log);
    Ok((sim.log, actuation))
}

fn simple_row(t: f64, s: &SimpleState, omega: &[f64; 12]) -> Vec<f64> {
    let r = s.rotation();
    let v = r * s.twist.fixed_rows::<3>(3);
    let e = crate::se3::euler_rate_matrix(s.pose[0], s.pose[1]).try_inverse().unwrap_or_default() * s.twist.fixed_rows::<3>(0);
    let mut row = vec![t, s.pose[3], s.pose[4], s.pose[5], s.pose[0], s.pose[1], s.pose[2], v.x, v.y, v.z, e.x, e.y, e.z];
    row.extend(omega);
    row
}

fn run_simple(cfg: &ScenarioConfig, removed: &[usize], controller: &FlatController) -> Result<(TimeSeriesLog, Actuation), RunError> {
    let model = &controller.model;
    let mut s = simple_initial(model, cfg);
    let reference = reference_for(cfg, s.flat());
    if let Some(r) = &reference {
        check_reference(r.as_ref(), cfg.t_end).map_err(RunError::Reference)?;
    }
    let mut columns: Vec<String> = std::iter::once("t").chain(SHELL_COLUMNS).map(String::from).collect();
    columns.extend((1..=12).map(|m| format!("w{m}")));
    if reference.is_some() {
        columns.extend(DECISION_COLUMNS.iter().map(|c| c.to_string()));
    }
    let mut log = TimeSeriesLog::new(columns);
    let h = cfg.integrator.dt;
    let steps = (cfg.t_end / h).round() as usize;
    let every = |p: f64| ((p / h).round() as usize).max(1);
    let (log_every, control_every) = (every(1.0 / cfg.log_rate), every(cfg.control_period()));
    let mut omega = open_loop_speeds(open_motors(cfg));
    let mut actuation = Actuation { cap: model.cap, ..Actuation::default() };
    let mut last = vec![0.0; DECISION_COLUMNS.len()];
    let mut filter = RateFilter::new(cfg.control.rate_filter, cfg.control_period());
    let list = disturbances(cfg);
    for n in 0..=steps {
        let t = n as f64 * h;
        if let Some(r) = &reference {
            if n % control_every == 0 && n < steps {
                let d = controller.decide(&filter.smooth(&s), r.sample(t));
                actuation.record(&d);
                last = d.values(&s);
                omega = d.allocation.omega;
            }
        }
        if n % log_every == 0 {
            let mut row = simple_row(t, &s, &omega);
            if reference.is_some() {
                row.extend(&last);
            }
            log.push(row)?;
        }
        if n == steps {
            break;
        }
        let mut effective = omega;
        for &m in removed {
            effective[m - 1] = 0.0;
        }
        let w = disturbance_at(list, t);
        let rt = s.rotation().transpose();
        let f = rt * w.force;
        let moment = rt * w.moment + (-model.com).cross(&f);
        let extra = Vector6::new(moment.x, moment.y, moment.z, f.x, f.y, f.z);
        s = simple_step(&s, &effective, model, &extra, h).map_err(|e| match e {
            ControlError::Gimbal { pitch_deg } => RunError::Dynamics(DynamicsError::Diverged {
                t,
                reason: format!("pitch {pitch_deg:.1}° beyond the Euler-angle range"),
                state: s.pose.iter().chain(s.twist.iter()).copied().collect(),
            }),
            e => e.into(),
        })?;
    }
    actuation.max_motor_speed = max_motor_speed(&log);
    Ok((log, actuation))
}

fn run_plant(cfg: &ScenarioConfig, removed: &[usize], controller: &FlatController) -> Result<(TimeSeriesLog, Actuation), RunError> {
    match cfg.plant {
        Plant::FullTwin => {
            let mut build = cfg.build.clone();
            build.removed_flagella.extend(removed);
            build.removed_flagella.sort_unstable();
            build.removed_flagella.dedup();
            run_twin(cfg, &build, controller)
        }
        Plant::SimpleModel => {
            let mut all: Vec<usize> = cfg.build.removed_flagella.iter().chain(&cfg.build.removed_modules).chain(removed).copied().collect();
            all.sort_unstable();
            all.dedup();
            run_simple(cfg, &all, controller)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assumed {
    pub name: String,
    pub value: serde_json::Value,
    pub provenance: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub name: String,
    pub plant: Plant,
    pub config_hash: String,
    pub version: String,
    pub csv_schema: u32,
    pub seed: u64,
    pub t_end: f64,
    pub logs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub actuation: Actuation,
    /// Allocation matrix condition number and the spin pattern in use.
    pub allocation_condition: f64,
    pub spin: Vec<i8>,
    pub assumed: Vec<Assumed>,
}

fn assumed(cfg: &ScenarioConfig) -> Vec<Assumed> {
    let b = &cfg.build;
    let h = &cfg.hydro;
    let c = &cfg.control;
    let j = |v: serde_json::Value| v;
    let list: Vec<(&str, serde_json::Value, &'static str)> = vec![
        ("build.edge_length", j(b.edge_length.into()), "reported"),
        ("build.shell_mass", j(b.shell_mass.into()), "reported"),
        ("build.total_mass", j(b.total_mass.into()), "reported"),
        ("build.cg_drop", j(b.cg_drop.into()), "reported"),
        ("control.omega_max_rpm", j(c.omega_max_rpm.into()), "reported"),
        ("control.cap_fraction", j(c.cap_fraction.into()), "reported"),
        ("build.shaft_length", j(b.shaft_length.into()), "assumed"),
        ("build.shaft_radius", j(b.shaft_radius.into()), "assumed"),
        ("build.hook_mass", j(b.hook_mass.into()), "assumed"),
        ("build.hook_length", j(b.hook_length.into()), "assumed"),
        ("build.hook_angle_deg", j(b.hook_angle_deg.into()), "assumed"),
        ("build.flagellum", serde_json::to_value(&b.flagellum).expect("serializes"), "assumed"),
        ("hydro.water_density", j(h.water_density.into()), "assumed"),
        ("hydro.rod_cd_normal", j(h.rod_cd_normal.into()), "assumed"),
        ("hydro.rod_cd_tangent", j(h.rod_cd_tangent.into()), "assumed"),
        ("hydro.rod_cl", j(h.rod_cl.into()), "assumed"),
        ("hydro.rod_ca", j(h.rod_ca.into()), "assumed"),
        ("hydro.shell_added_mass", serde_json::to_value(h.shell_added_mass).expect("serializes"), "assumed"),
        ("hydro.shell_linear_drag", serde_json::to_value(h.shell_linear_drag).expect("serializes"), "assumed"),
        ("hydro.damping_time", j(h.damping_time.into()), "assumed"),
        ("hydro.shell_drag", serde_json::to_value(h.shell_drag).expect("serializes"), "calibrated"),
        ("control.thrust_coefficient", j(c.thrust_coefficient.into()), "calibrated"),
        ("control.reaction_coefficient", j(c.reaction_coefficient.into()), "calibrated"),
        ("control.drag", serde_json::to_value(c.drag).expect("serializes"), "calibrated"),
        ("control.kp", serde_json::to_value(c.kp).expect("serializes"), "assumed"),
        ("control.kd", serde_json::to_value(c.kd).expect("serializes"), "assumed"),
        ("control.rate", j(c.rate.into()), "assumed"),
        ("control.rate_filter", j(c.rate_filter.into()), "assumed"),
        ("control.spin", serde_json::to_value(&c.spin).expect("serializes"), "assumed"),
        ("control.net_weight", j(c.net_weight.into()), "assumed"),
        ("integrator", serde_json::to_value(cfg.integrator).expect("serializes"), "assumed"),
        ("initial", serde_json::to_value(&cfg.initial).expect("serializes"), "assumed"),
    ];
    let mut out: Vec<Assumed> = list.into_iter().map(|(name, value, provenance)| Assumed { name: name.into(), value, provenance }).collect();
    if let ScenarioKind::DepthYawHold { disturbances } = &cfg.scenario {
        out.push(Assumed { name: "scenario.disturbances".into(), value: serde_json::to_value(disturbances).expect("serializes"), provenance: "assumed" });
    }
    out
}

/// Result of one scenario run: named logs and the summary.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub logs: Vec<(String, TimeSeriesLog)>,
    pub summary: Summary,
}

fn col(log: &TimeSeriesLog, name: &str) -> Vec<f64> {
    log.column(name).unwrap_or_default()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a: f64, x| a.max(x.abs()))
}

fn first_last(v: &[f64]) -> (f64, f64) {
    (v.first().copied().unwrap_or(0.0), v.last().copied().unwrap_or(0.0))
}

/// Pose changes, tilt and tracking errors common to every log.
pub fn log_metrics(log: &TimeSeriesLog, prefix: &str) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    let key = |k: &str| format!("{prefix}{k}");
    let (x0, x1) = first_last(&col(log, "x"));
    let (y0, y1) = first_last(&col(log, "y"));
    let (z0, z1) = first_last(&col(log, "z"));
    let yaw = col(log, "yaw");
    let (w0, w1) = first_last(&yaw);
    m.insert(key("dx"), x1 - x0);
    m.insert(key("dy"), y1 - y0);
    m.insert(key("dz"), z1 - z0);
    m.insert(key("dyaw_deg"), (w1 - w0).to_degrees());
    let tilt = max_abs(&col(log, "roll")).max(max_abs(&col(log, "pitch")));
    m.insert(key("max_tilt_deg"), tilt.to_degrees());
    if log.has("err_z") {
        let ez = col(log, "err_z");
        let epsi: Vec<f64> = col(log, "err_psi").iter().map(|e| wrap_angle(*e)).collect();
        m.insert(key("max_depth_error"), max_abs(&ez));
        m.insert(key("max_yaw_error_deg"), max_abs(&epsi).to_degrees());
        m.insert(key("final_depth_error"), ez.last().copied().unwrap_or(0.0));
        m.insert(key("final_yaw_error_deg"), epsi.last().copied().unwrap_or(0.0).to_degrees());
        let (ex, ey) = (col(log, "err_x"), col(log, "err_y"));
        let n = ex.len().max(1) as f64;
        let ms = ex.iter().zip(&ey).map(|(a, b)| a * a + b * b).sum::<f64>() / n;
        m.insert(key("rms_planar_error"), ms.sqrt());
    }
    m
}

/// Net planar speed over the last `window` seconds of a log.
pub fn planar_speed(log: &TimeSeriesLog, window: f64) -> f64 {
    let (t, x, y) = (col(log, "t"), col(log, "x"), col(log, "y"));
    let Some(&t1) = t.last() else { return 0.0 };
    let i = t.iter().position(|&s| s >= t1 - window - 1e-9).unwrap_or(0);
    let n = t.len() - 1;
    if n == i {
        return 0.0;
    }
    (x[n] - x[i]).hypot(y[n] - y[i]) / (t[n] - t[i])
}

/// Mean speed along the unit `direction` over the last `window` seconds.
pub fn forward_speed(log: &TimeSeriesLog, window: f64, direction: [f64; 2]) -> f64 {
    let (t, x, y) = (col(log, "t"), col(log, "x"), col(log, "y"));
    let Some(&t1) = t.last() else { return 0.0 };
    let i = t.iter().position(|&s| s >= t1 - window - 1e-9).unwrap_or(0);
    let n = t.len() - 1;
    let norm = direction[0].hypot(direction[1]);
    if n == i || norm == 0.0 {
        return 0.0;
    }
    ((x[n] - x[i]) * direction[0] + (y[n] - y[i]) * direction[1]) / norm / (t[n] - t[i])
}

impl Prepared {
    pub fn new(config: ScenarioConfig) -> Result<Self, RunError> {
        let config = config.validated()?;
        let model = controller_model(&config)?;
        let controller = FlatController::new(model, Gains::from_params(&config.control))?;
        Ok(Self { config, controller })
    }

    pub fn run(&self) -> Result<Outcome, RunError> {
        let cfg = &self.config;
        let id = cfg.scenario.id();
        let mut logs = Vec::new();
        let mut metrics = BTreeMap::new();
        let mut actuation = Actuation { cap: self.controller.model.cap, ..Actuation::default() };
        if let ScenarioKind::Redundancy { impaired, speed_window, direction, .. } = &cfg.scenario {
            let mut speeds = [0.0; 2];
            for (k, (label, removed)) in [("full", &[][..]), ("impaired", &impaired[..])].into_iter().enumerate() {
                let (log, a) = run_plant(cfg, removed, &self.controller)?;
                speeds[k] = planar_speed(&log, *speed_window);
                metrics.insert(format!("{label}_speed"), speeds[k]);
                metrics.insert(format!("{label}_forward_speed"), forward_speed(&log, *speed_window, *direction));
                metrics.extend(log_metrics(&log, &format!("{label}_")));
                actuation.merge(&a);
                logs.push((format!("{}-{label}", cfg.name), log));
            }
            metrics.insert("speed_ratio".into(), speeds[1] / speeds[0]);
        } else {
            let (log, a) = run_plant(cfg, &[], &self.controller)?;
            metrics.extend(log_metrics(&log, ""));
            if let ScenarioKind::Square { leg_duration, .. } = &cfg.scenario {
                let (t, x, y) = (col(&log, "t"), col(&log, "x"), col(&log, "y"));
                let mut leg = 0;
                let mut start = 0;
                for i in 1..t.len() {
                    let end = i + 1 == t.len() || t[i] >= (leg + 1) as f64 * leg_duration - 1e-9;
                    if end {
                        metrics.insert(format!("leg{}_dx", leg + 1), x[i] - x[start]);
                        metrics.insert(format!("leg{}_dy", leg + 1), y[i] - y[start]);
                        leg += 1;
                        start = i;
                    }
                }
            }
            actuation.merge(&a);
            logs.push((cfg.name.clone(), log));
        }
        let a = crate::control::allocation_matrix(&self.controller.model)?;
        let summary = Summary {
            scenario: id.into(),
            name: cfg.name.clone(),
            plant: cfg.plant,
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").into(),
            csv_schema: CSV_SCHEMA_VERSION,
            seed: cfg.seed,
            t_end: cfg.t_end,
            logs: logs.iter().map(|(n, _)| format!("{n}.csv")).collect(),
            metrics,
            actuation,
            allocation_condition: crate::control::condition_number(&a),
            spin: self.controller.model.spin.iter().map(|s| *s as i8).collect(),
            assumed: assumed(cfg),
        };
        Ok(Outcome { logs, summary })
    }
}

/// Loads, validates and runs a config file.
pub fn run_scenario(path: &Path) -> Result<Outcome, RunError> {
    Prepared::new(ScenarioConfig::load(path)?)?.run()
}

impl Outcome {
    /// Writes `<name>.csv` per log and `<name>.summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
        std::fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.into(), source })?;
        let mut written = Vec::new();
        for (name, log) in &self.logs {
            let p = dir.join(format!("{name}.csv"));
            log.save_csv(&p)?;
            written.push(p);
        }
        let p = dir.join(format!("{}.summary.json", self.summary.name));
        let text = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        std::fs::write(&p, text + "\n").map_err(|source| RunError::Io { path: p.clone(), source })?;
        written.push(p);
        Ok(written)
    }
}
