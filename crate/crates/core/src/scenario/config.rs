use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::ControlParams;
use crate::dynamics::{DynamicsParams, IntegratorConfig, IntegratorKind, RPM};
use crate::hydro::HydroParams;
use crate::kinematics::zodiaq::{face_table, ZodiaqParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("include cycle through {0}")]
    IncludeCycle(PathBuf),
    #[error("invalid configuration:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

/// One problem found in a configuration, with the dotted key it concerns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plant {
    FullTwin,
    SimpleModel,
}

/// Hydrodynamic coefficients with diagonal shell matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HydroConfig {
    pub water_density: f64,
    pub rod_cd_normal: f64,
    pub rod_cd_tangent: f64,
    pub rod_cl: f64,
    pub rod_ca: f64,
    /// Quadratic shell drag (angular; linear).
    pub shell_drag: [f64; 6],
    pub shell_linear_drag: [f64; 6],
    pub shell_added_mass: [f64; 6],
    pub gravity: f64,
    pub damping_time: f64,
}

fn diagonal(m: &Matrix6<f64>) -> [f64; 6] {
    std::array::from_fn(|i| m[(i, i)])
}

impl Default for HydroConfig {
    fn default() -> Self {
        let h = HydroParams::<f64>::default();
        Self {
            water_density: h.water_density,
            rod_cd_normal: h.rod_cd_normal,
            rod_cd_tangent: h.rod_cd_tangent,
            rod_cl: h.rod_cl,
            rod_ca: h.rod_ca,
            shell_drag: diagonal(&h.shell_drag),
            shell_linear_drag: diagonal(&h.shell_linear_drag),
            shell_added_mass: diagonal(&h.shell_added_mass),
            gravity: h.gravity,
            damping_time: DynamicsParams::<f64>::default().damping_time,
        }
    }
}

impl HydroConfig {
    pub fn dynamics(&self) -> DynamicsParams<f64> {
        let diag = |v: &[f64; 6]| Matrix6::from_diagonal(&Vector6::from(*v));
        DynamicsParams {
            hydro: HydroParams {
                water_density: self.water_density,
                rod_cd_normal: self.rod_cd_normal,
                rod_cd_tangent: self.rod_cd_tangent,
                rod_cl: self.rod_cl,
                rod_ca: self.rod_ca,
                shell_drag: diag(&self.shell_drag),
                shell_linear_drag: diag(&self.shell_linear_drag),
                shell_added_mass: diag(&self.shell_added_mass),
                gravity: self.gravity,
            },
            damping_time: self.damping_time,
        }
    }
}

/// Offset of the initial state from the resting equilibrium.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    /// Roll, pitch, yaw in degrees.
    pub attitude_deg: [f64; 3],
    pub position: [f64; 3],
    /// World-frame velocity of the shell origin.
    pub velocity: [f64; 3],
    /// Half-width of a seeded uniform random shell velocity added on top.
    pub velocity_jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSpeed {
    pub motor: usize,
    /// Signed speed; positive is counter-clockwise seen from outside.
    pub rpm: f64,
}

/// External wrench on the shell over a time window, world axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Disturbance {
    pub start: f64,
    pub duration: f64,
    pub force: [f64; 3],
    pub moment: [f64; 3],
}

impl Default for Disturbance {
    fn default() -> Self {
        Self { start: 0.0, duration: 1.0, force: [0.0; 3], moment: [0.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioKind {
    OpenloopFig2c {
        #[serde(default = "fig2c_motors")]
        motors: Vec<MotorSpeed>,
    },
    Semicircle {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_period")]
        period: f64,
        /// Fixed heading reference in degrees.
        #[serde(default)]
        heading_deg: f64,
    },
    DepthYawHold {
        #[serde(default)]
        disturbances: Vec<Disturbance>,
    },
    Square {
        #[serde(default = "default_leg")]
        leg_duration: f64,
        /// Commanded planar acceleration, m/s².
        #[serde(default = "default_accel")]
        acceleration: f64,
        /// Unit directions of the legs in the world plane.
        #[serde(default = "square_legs")]
        legs: Vec<[f64; 2]>,
    },
    Redundancy {
        #[serde(default = "default_leg")]
        leg_duration: f64,
        #[serde(default = "default_accel")]
        acceleration: f64,
        #[serde(default = "default_direction")]
        direction: [f64; 2],
        /// Motors whose flagellum is removed in the impaired run.
        #[serde(default = "default_impaired")]
        impaired: Vec<usize>,
        /// Window at the end of each run over which speed is averaged.
        #[serde(default = "default_window")]
        speed_window: f64,
    },
    CrawlPattern {
        #[serde(default = "crawl_motors")]
        motors: Vec<MotorSpeed>,
    },
}

fn fig2c_motors() -> Vec<MotorSpeed> {
    [6, 8, 9, 11].into_iter().map(|motor| MotorSpeed { motor, rpm: 60.0 }).collect()
}

fn crawl_motors() -> Vec<MotorSpeed> {
    [(6, 60.0), (8, 60.0), (10, -60.0), (12, -60.0)].into_iter().map(|(motor, rpm)| MotorSpeed { motor, rpm }).collect()
}

fn default_radius() -> f64 {
    2.0
}

fn default_period() -> f64 {
    60.0
}

fn default_leg() -> f64 {
    40.0
}

fn default_accel() -> f64 {
    0.004
}

fn default_direction() -> [f64; 2] {
    [1.0, 0.0]
}

fn default_impaired() -> Vec<usize> {
    vec![5]
}

fn default_window() -> f64 {
    15.0
}

fn square_legs() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
}

impl ScenarioKind {
    pub fn id(&self) -> &'static str {
        match self {
            Self::OpenloopFig2c { .. } => "openloop-fig2c",
            Self::Semicircle { .. } => "semicircle",
            Self::DepthYawHold { .. } => "depth-yaw-hold",
            Self::Square { .. } => "square",
            Self::Redundancy { .. } => "redundancy",
            Self::CrawlPattern { .. } => "crawl-pattern",
        }
    }

    pub fn is_closed_loop(&self) -> bool {
        !matches!(self, Self::OpenloopFig2c { .. } | Self::CrawlPattern { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_plant")]
    pub plant: Plant,
    #[serde(default)]
    pub seed: u64,
    pub t_end: f64,
    #[serde(default = "default_log_rate")]
    pub log_rate: f64,
    #[serde(default)]
    pub build: ZodiaqParams,
    #[serde(default)]
    pub hydro: HydroConfig,
    #[serde(default = "default_integrator")]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub initial: InitialConfig,
    pub scenario: ScenarioKind,
}

fn default_plant() -> Plant {
    Plant::FullTwin
}

fn default_log_rate() -> f64 {
    50.0
}

fn default_integrator() -> IntegratorConfig {
    IntegratorConfig::implicit(2e-3)
}

fn read_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })
}

/// Merges `over` into `base`; tables merge key by key, anything else replaces.
pub fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn resolve(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Table, ConfigError> {
    let canonical = path.canonicalize().map_err(|source| ConfigError::Io { path: path.into(), source })?;
    if stack.contains(&canonical) {
        return Err(ConfigError::IncludeCycle(canonical));
    }
    stack.push(canonical);
    let mut own = read_table(path)?;
    let mut merged = toml::Table::new();
    if let Some(inc) = own.remove("include") {
        let list = match inc {
            toml::Value::String(s) => vec![s],
            toml::Value::Array(a) => a
                .into_iter()
                .map(|v| {
                    v.as_str().map(String::from).ok_or_else(|| ConfigError::Parse { path: path.into(), message: "include entries must be strings".into() })
                })
                .collect::<Result<_, _>>()?,
            _ => return Err(ConfigError::Parse { path: path.into(), message: "include must be a string or a list of strings".into() }),
        };
        let dir = path.parent().unwrap_or(Path::new("."));
        for rel in list {
            deep_merge(&mut merged, resolve(&dir.join(rel), stack)?);
        }
    }
    deep_merge(&mut merged, own);
    stack.pop();
    Ok(merged)
}

impl ScenarioConfig {
    /// Config with every block at its default.
    pub fn new(name: &str, scenario: ScenarioKind, t_end: f64) -> Self {
        Self {
            name: name.into(),
            plant: default_plant(),
            seed: 0,
            t_end,
            log_rate: default_log_rate(),
            build: ZodiaqParams::default(),
            hydro: HydroConfig::default(),
            integrator: default_integrator(),
            control: ControlParams::default(),
            initial: InitialConfig::default(),
            scenario,
        }
    }

    /// Reads a config file, resolving `include` lists relative to the file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let table = resolve(path, &mut Vec::new())?;
        Self::from_table(table).map_err(|message| ConfigError::Parse { path: path.into(), message })
    }

    pub fn from_table(table: toml::Table) -> Result<Self, String> {
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// SHA-256 of the resolved configuration in canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn control_period(&self) -> f64 {
        1.0 / self.control.rate
    }

    /// Schema-level and physical sanity checks.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut bad = |location: &str, message: String| out.push(Diagnostic { location: location.into(), message });
        let positive = |v: f64| v > 0.0 && v.is_finite();
        for (loc, v) in [("t_end", self.t_end), ("log_rate", self.log_rate), ("integrator.dt", self.integrator.dt), ("control.rate", self.control.rate)] {
            if !positive(v) {
                bad(loc, format!("must be positive, got {v}"));
            }
        }
        let b = &self.build;
        for (loc, v) in [
            ("build.edge_length", b.edge_length),
            ("build.shell_mass", b.shell_mass),
            ("build.total_mass", b.total_mass),
            ("build.trim_density", b.trim_density),
            ("build.shaft_length", b.shaft_length),
            ("build.shaft_radius", b.shaft_radius),
            ("build.hook_mass", b.hook_mass),
            ("build.hook_length", b.hook_length),
            ("build.flagellum.length", b.flagellum.length),
            ("build.flagellum.radius", b.flagellum.radius),
            ("build.flagellum.youngs_modulus", b.flagellum.youngs_modulus),
            ("build.flagellum.density", b.flagellum.density),
        ] {
            if !positive(v) {
                bad(loc, format!("must be positive, got {v}"));
            }
        }
        if positive(b.total_mass) && positive(b.shell_mass) && b.shaft_mass() <= 0.0 {
            bad("build.total_mass", format!("leaves no mass for the motor shafts ({} kg each)", b.shaft_mass()));
        }
        if !(b.cg_drop >= 0.0) {
            bad("build.cg_drop", format!("must be non-negative, got {}", b.cg_drop));
        }
        if !(b.flagellum.poisson_ratio > -1.0 && b.flagellum.poisson_ratio <= 0.5) {
            bad("build.flagellum.poisson_ratio", format!("{} outside (-1, 0.5]", b.flagellum.poisson_ratio));
        }
        if b.quadrature_points == 0 {
            bad("build.quadrature_points", "must be at least 1".into());
        }
        if b.magnus_substeps == 0 {
            bad("build.magnus_substeps", "must be at least 1".into());
        }
        for (loc, list) in [("build.removed_flagella", &b.removed_flagella), ("build.removed_modules", &b.removed_modules)] {
            for m in list {
                if !(1..=12).contains(m) {
                    bad(loc, format!("motor M{m} does not exist"));
                }
            }
        }
        let h = &self.hydro;
        for (loc, v) in [("hydro.water_density", h.water_density), ("hydro.gravity", h.gravity)] {
            if !positive(v) {
                bad(loc, format!("must be positive, got {v}"));
            }
        }
        for (loc, v) in [
            ("hydro.rod_cd_normal", h.rod_cd_normal),
            ("hydro.rod_cd_tangent", h.rod_cd_tangent),
            ("hydro.rod_ca", h.rod_ca),
            ("hydro.damping_time", h.damping_time),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(loc, format!("must be non-negative, got {v}"));
            }
        }
        for (loc, d) in [("hydro.shell_drag", &h.shell_drag), ("hydro.shell_linear_drag", &h.shell_linear_drag)] {
            if let Some(i) = d.iter().position(|v| !(*v >= 0.0)) {
                bad(&format!("{loc}[{i}]"), format!("must be non-negative, got {}", d[i]));
            }
        }
        if let Some(i) = h.shell_added_mass.iter().position(|v| !(*v >= 0.0)) {
            bad(&format!("hydro.shell_added_mass[{i}]"), format!("added mass matrix is not positive semidefinite (diagonal {})", h.shell_added_mass[i]));
        }
        let c = &self.control;
        if !positive(c.omega_max_rpm) {
            bad("control.omega_max_rpm", format!("must be positive, got {}", c.omega_max_rpm));
        }
        if !(c.cap_fraction > 0.0 && c.cap_fraction <= 1.0) {
            bad("control.cap_fraction", format!("cap {} × ω_max exceeds ω_max or is not positive", c.cap_fraction));
        }
        if !positive(c.thrust_coefficient) {
            bad("control.thrust_coefficient", format!("must be positive, got {}", c.thrust_coefficient));
        }
        if !(c.reaction_coefficient >= 0.0) {
            bad("control.reaction_coefficient", format!("must be non-negative, got {}", c.reaction_coefficient));
        }
        for (loc, g) in [("control.kp", &c.kp), ("control.kd", &c.kd)] {
            if let Some(i) = g.iter().position(|v| !positive(*v)) {
                bad(&format!("{loc}[{i}]"), format!("gain must be positive, got {}", g[i]));
            }
        }
        if !(c.rate_filter >= 0.0) {
            bad("control.rate_filter", format!("must be non-negative, got {}", c.rate_filter));
        }
        if let Some(i) = c.drag.iter().position(|v| !(*v >= 0.0)) {
            bad(&format!("control.drag[{i}]"), format!("must be non-negative, got {}", c.drag[i]));
        }
        if !c.spin.is_empty() {
            if c.spin.len() != 12 {
                bad("control.spin", format!("needs 12 entries, got {}", c.spin.len()));
            }
            if let Some(i) = c.spin.iter().position(|s| s.abs() != 1) {
                bad(&format!("control.spin[{i}]"), format!("must be +1 or -1, got {}", c.spin[i]));
            }
            for (j, p) in c.pairs.iter().enumerate() {
                if let (Some(a), Some(b)) = (c.spin.get(p[0].wrapping_sub(1)), c.spin.get(p[1].wrapping_sub(1))) {
                    if a != b {
                        bad(&format!("control.pairs[{j}]"), "both motors of a pair need the same spin direction".into());
                    }
                }
            }
        }
        if c.pairs.len() != 6 {
            bad("control.pairs", format!("needs 6 pairs, got {}", c.pairs.len()));
        }
        let faces = if positive(b.edge_length) { Some(face_table(b.edge_length)) } else { None };
        let mut seen = BTreeSet::new();
        for (j, p) in c.pairs.iter().enumerate() {
            let loc = format!("control.pairs[{j}]");
            if p.iter().any(|m| !(1..=12).contains(m)) || p[0] == p[1] {
                bad(&loc, format!("({}, {}) must name two distinct motors in 1..=12", p[0], p[1]));
                continue;
            }
            for m in p {
                if !seen.insert(*m) {
                    bad(&loc, format!("motor M{m} appears in more than one pair"));
                }
            }
            if let Some(f) = &faces {
                let s = f.face(p[0]).normal() + f.face(p[1]).normal();
                if s.norm() > 1e-9 {
                    bad(&loc, format!("faces of M{} and M{} are not antiparallel", p[0], p[1]));
                }
            }
        }
        if self.integrator.kind == IntegratorKind::ImplicitEuler && self.integrator.newton_max_iterations == 0 {
            bad("integrator.newton_max_iterations", "must be at least 1".into());
        }
        let limit = c.omega_max_rpm;
        let motors = |loc: &str, list: &[MotorSpeed], out: &mut Vec<Diagnostic>| {
            for (i, m) in list.iter().enumerate() {
                if !(1..=12).contains(&m.motor) {
                    out.push(Diagnostic { location: format!("{loc}[{i}].motor"), message: format!("motor M{} does not exist", m.motor) });
                }
                if !(m.rpm.abs() <= limit) {
                    out.push(Diagnostic { location: format!("{loc}[{i}].rpm"), message: format!("|{}| rpm exceeds ω_max = {limit} rpm", m.rpm) });
                }
                if b.removed_modules.contains(&m.motor) {
                    out.push(Diagnostic { location: format!("{loc}[{i}].motor"), message: format!("module M{} is removed", m.motor) });
                }
            }
        };
        match &self.scenario {
            ScenarioKind::OpenloopFig2c { motors: list } | ScenarioKind::CrawlPattern { motors: list } => motors("scenario.motors", list, &mut out),
            ScenarioKind::Semicircle { radius, period, .. } => {
                for (loc, v) in [("scenario.radius", *radius), ("scenario.period", *period)] {
                    if !positive(v) {
                        out.push(Diagnostic { location: loc.into(), message: format!("must be positive, got {v}") });
                    }
                }
            }
            ScenarioKind::DepthYawHold { disturbances } => {
                for (i, d) in disturbances.iter().enumerate() {
                    if !(d.duration > 0.0 && d.start >= 0.0) {
                        out.push(Diagnostic { location: format!("scenario.disturbances[{i}]"), message: "window needs start ≥ 0 and duration > 0".into() });
                    }
                }
            }
            ScenarioKind::Square { leg_duration, legs, .. } => {
                if !positive(*leg_duration) {
                    out.push(Diagnostic { location: "scenario.leg_duration".into(), message: format!("must be positive, got {leg_duration}") });
                }
                if legs.is_empty() {
                    out.push(Diagnostic { location: "scenario.legs".into(), message: "needs at least one leg".into() });
                }
            }
            ScenarioKind::Redundancy { leg_duration, impaired, speed_window, direction, .. } => {
                if !positive(*leg_duration) || !(*speed_window > 0.0 && speed_window < leg_duration) {
                    out.push(Diagnostic { location: "scenario.speed_window".into(), message: "needs 0 < speed_window < leg_duration".into() });
                }
                if impaired.iter().any(|m| !(1..=12).contains(m)) {
                    out.push(Diagnostic { location: "scenario.impaired".into(), message: "motor ids must be within 1..=12".into() });
                }
                if direction[0].hypot(direction[1]) == 0.0 {
                    out.push(Diagnostic { location: "scenario.direction".into(), message: "must be nonzero".into() });
                }
            }
        }
        out
    }

    pub fn validated(self) -> Result<Self, ConfigError> {
        let d = self.validate();
        if d.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::Invalid(d))
        }
    }

    pub fn omega_max(&self) -> f64 {
        self.control.omega_max_rpm * RPM
    }
}
