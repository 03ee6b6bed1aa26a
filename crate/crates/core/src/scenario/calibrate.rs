//! Thrust and drag coefficients fitted against the full model.

use nalgebra::{Matrix6, Vector6};
use serde::Serialize;

use super::{controller_model, initial_state, RunError, ScenarioConfig};
use crate::control::{allocate, allocation_matrix, SimpleModel};
use crate::dynamics::{simulate, IntegratorConfig, Model, MotorProgram, OpenLoop, SimulationConfig};
use crate::kinematics::zodiaq::{clamped_zodiaq, face_table};
use crate::kinematics::GeneralizedState;
use crate::se3::Wrench;
use crate::timeseries::TimeSeriesLog;

/// Body length used to express the top speed.
pub const BODY_LENGTH: f64 = 0.30;
/// Top translational speed, 8 body lengths per minute.
pub const TOP_SPEED: f64 = 8.0 * BODY_LENGTH / 60.0;
/// Top yaw rate, 3π rad per minute.
pub const TOP_YAW_RATE: f64 = 3.0 * std::f64::consts::PI / 60.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThrustCalibration {
    pub motor: usize,
    pub speed: f64,
    /// Mean fluid force on the clamped build along the inward face normal.
    pub thrust: f64,
    /// Mean fluid moment about the outward face normal.
    pub moment: f64,
    pub thrust_coefficient: f64,
    pub reaction_coefficient: f64,
}

/// Spins one motor of a clamped build and averages the fluid wrench over
/// whole revolutions after a settling time.
pub fn calibrate_thrust(cfg: &ScenarioConfig, motor: usize, speed: f64, settle_turns: f64, average_turns: f64) -> Result<ThrustCalibration, RunError> {
    let model = Model::new(clamped_zodiaq::<f64>(&cfg.build)?, cfg.hydro.dynamics());
    let mut state = model.equilibrium(&GeneralizedState::zeros(model.asm.dof()), 1e-10)?;
    let mut motors = MotorProgram::new(0.05, cfg.omega_max());
    motors.command(motor, 0.0, speed)?;
    let integrator = IntegratorConfig { kind: crate::dynamics::IntegratorKind::ImplicitEuler, ..cfg.integrator };
    let h = integrator.dt;
    let period = 2.0 * std::f64::consts::PI / speed.abs();
    let settle = (settle_turns * period / h).round() as usize;
    let average = (average_turns * period / h).round() as usize;
    let mut t = 0.0;
    let mut sum = Wrench::zero();
    for n in 0..settle + average {
        model.step(&mut state, t, &integrator, &motors, &Wrench::zero())?;
        t += h;
        if n >= settle {
            sum += model.fluid_wrench(state.q.as_slice(), state.qdot.as_slice());
        }
    }
    let normal = face_table(cfg.build.edge_length).face(motor).normal();
    let thrust = -sum.force.dot(&normal) / average as f64;
    let moment = sum.moment.dot(&normal) / average as f64;
    let w2 = speed * speed;
    Ok(ThrustCalibration { motor, speed, thrust, moment, thrust_coefficient: thrust / w2, reaction_coefficient: -speed.signum() * moment / w2 })
}

/// Motor speeds for the largest pure wrench along `axis` (angular 0..3,
/// linear 3..6) the allocation reaches before saturating.
pub fn full_thrust(model: &SimpleModel, axis: usize) -> Result<([f64; 12], f64), RunError> {
    let a = allocation_matrix(model)?;
    let a_inv = a.try_inverse().expect("checked invertible");
    let mut e = Vector6::zeros();
    e[axis] = 1.0;
    let scale = model.cap * model.cap / (a_inv * e).amax();
    // stay a hair inside the cap so no pair reports saturation
    let wrench = e * scale * (1.0 - 1e-9);
    Ok((allocate(&wrench, model, &a_inv).omega, scale))
}

/// Mean planar speed over the final `window` seconds.
pub fn mean_planar_speed(log: &TimeSeriesLog, window: f64) -> f64 {
    tail_mean(log, window, |r, i| r[i.0].hypot(r[i.1]), ("vx", "vy"))
}

/// Mean yaw rate over the final `window` seconds.
pub fn mean_yaw_rate(log: &TimeSeriesLog, window: f64) -> f64 {
    tail_mean(log, window, |r, i| r[i.0], ("yaw_rate", "yaw_rate"))
}

fn tail_mean(log: &TimeSeriesLog, window: f64, f: impl Fn(&[f64], (usize, usize)) -> f64, cols: (&str, &str)) -> f64 {
    let (Ok(a), Ok(b)) = (log.index(cols.0), log.index(cols.1)) else { return 0.0 };
    let Some(t1) = log.rows.last().map(|r| r[0]) else { return 0.0 };
    let tail: Vec<f64> = log.rows.iter().filter(|r| r[0] >= t1 - window - 1e-9).map(|r| f(r, (a, b))).collect();
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DragStep {
    pub shell_drag: [f64; 6],
    pub speed: f64,
    pub yaw_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DragCalibration {
    pub target_speed: f64,
    pub target_yaw_rate: f64,
    /// Largest pure force and yaw moment the allocation delivers.
    pub max_force: [f64; 3],
    pub max_yaw_moment: f64,
    pub steps: Vec<DragStep>,
    pub shell_drag: [f64; 6],
    /// Quadratic drag of the shell-only model giving the same top speeds.
    pub control_drag: [f64; 6],
}

fn speed_of(step: &DragStep, k: usize) -> f64 {
    if k < 3 {
        step.yaw_rate
    } else {
        step.speed
    }
}

/// Top speed and yaw rate of the full model under full forward thrust and
/// full yaw moment.
pub fn twin_top_speeds(cfg: &ScenarioConfig, duration: f64, window: f64) -> Result<(f64, f64), RunError> {
    let simple = controller_model(cfg)?;
    let model = Model::new(crate::kinematics::zodiaq::assemble_zodiaq::<f64>(&cfg.build)?, cfg.hydro.dynamics());
    let init = initial_state(&model, cfg)?;
    let sim_cfg = SimulationConfig { integrator: cfg.integrator, t_end: duration, log_rate: 10.0, log_coordinates: false };
    let mut out = [0.0; 2];
    for (k, axis) in [3, 2].into_iter().enumerate() {
        let (omega, _) = full_thrust(&simple, axis)?;
        let mut motors = MotorProgram::new(0.05, cfg.omega_max());
        motors.command_all(0.0, &omega)?;
        let sim = simulate(&model, init.clone(), motors, &mut OpenLoop, &sim_cfg)?;
        out[k] = if axis == 3 { mean_planar_speed(&sim.log, window) } else { mean_yaw_rate(&sim.log, window).abs() };
    }
    Ok((out[0], out[1]))
}

/// Rescales the shell's quadratic drag until the full model's top speed
/// and yaw rate match the targets, then sizes the shell-only model's drag
/// from the allocation limits.
pub fn calibrate_shell_drag(cfg: &ScenarioConfig, iterations: usize, duration: f64, window: f64) -> Result<DragCalibration, RunError> {
    let mut cfg = cfg.clone();
    let mut steps = Vec::new();
    for _ in 0..iterations {
        let (speed, yaw_rate) = twin_top_speeds(&cfg, duration, window)?;
        // speed ~ drag^-p; p = 1/2 for a bare shell, smaller while the
        // flagella carry part of the drag, so it is refit from the last step
        let exponent = |k: usize, now: f64| match steps.last() {
            Some(prev) => {
                let p: f64 = -(now / speed_of(prev, k)).ln() / (cfg.hydro.shell_drag[k] / prev.shell_drag[k]).ln();
                if p.is_finite() && p > 0.05 {
                    p.min(0.5)
                } else {
                    0.5
                }
            }
            None => 0.5,
        };
        let (pl, py) = (exponent(3, speed), exponent(0, yaw_rate));
        steps.push(DragStep { shell_drag: cfg.hydro.shell_drag, speed, yaw_rate });
        let (ls, ys) = ((speed / TOP_SPEED).powf(1.0 / pl), (yaw_rate / TOP_YAW_RATE).powf(1.0 / py));
        for i in 0..3 {
            cfg.hydro.shell_drag[i] *= ys;
            cfg.hydro.shell_drag[i + 3] *= ls;
        }
    }
    let simple = controller_model(&cfg)?;
    let (max_force, max_yaw_moment, control_drag) = simple_drag(&simple);
    Ok(DragCalibration {
        target_speed: TOP_SPEED,
        target_yaw_rate: TOP_YAW_RATE,
        max_force,
        max_yaw_moment,
        steps,
        shell_drag: cfg.hydro.shell_drag,
        control_drag,
    })
}

/// Drag of the shell-only model that puts its top speeds at the targets.
pub fn simple_drag(model: &SimpleModel) -> ([f64; 3], f64, [f64; 6]) {
    let a = allocation_matrix(model).expect("checked at construction");
    let a_inv = a.try_inverse().expect("invertible");
    let limit = |axis: usize| {
        let mut e = Vector6::zeros();
        e[axis] = 1.0;
        model.cap * model.cap / (a_inv * e).amax()
    };
    let force = [limit(3), limit(4), limit(5)];
    let yaw = limit(2);
    let d_ang = yaw / TOP_YAW_RATE.powi(2);
    let d = [d_ang, d_ang, d_ang, force[0] / TOP_SPEED.powi(2), force[1] / TOP_SPEED.powi(2), force[2] / TOP_SPEED.powi(2)];
    (force, yaw, d)
}

/// Shell-only model with its drag replaced.
pub fn with_drag(model: &SimpleModel, drag: [f64; 6]) -> SimpleModel {
    SimpleModel { drag: Matrix6::from_diagonal(&Vector6::from(drag)), ..model.clone() }
}
