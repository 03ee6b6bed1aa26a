use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Drive, DynamicsError, Model, MotorProgram};
use crate::kinematics::GeneralizedState;
use crate::real::Real;
use crate::se3::Wrench;
use crate::timeseries::TimeSeriesLog;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    Rk4,
    ImplicitEuler,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub kind: IntegratorKind,
    pub dt: f64,
    /// Velocity residual accepted by the implicit Newton iteration.
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { kind: IntegratorKind::Rk4, dt: 1e-4, newton_tolerance: 1e-6, newton_max_iterations: 12 }
    }
}

impl IntegratorConfig {
    pub fn implicit(dt: f64) -> Self {
        Self { kind: IntegratorKind::ImplicitEuler, dt, ..Self::default() }
    }

    pub fn rk4(dt: f64) -> Self {
        Self { kind: IntegratorKind::Rk4, dt, ..Self::default() }
    }
}

fn diverged<T: Real>(t: f64, reason: impl Into<String>, s: &GeneralizedState<T>) -> DynamicsError {
    DynamicsError::Diverged { t, reason: reason.into(), state: s.q.iter().chain(s.qdot.iter()).map(|v| v.value()).collect() }
}

impl<T: Real> Model<T> {
    fn accel_at(&self, q: &DVector<T>, v: &DVector<T>, motors: &MotorProgram, wrench: &Wrench<T>, t: f64) -> Result<DVector<T>, DynamicsError> {
        let mut drive: Drive<T> = motors.drive(&self.asm, t);
        drive.root_wrench = *wrench;
        Ok(self.evaluate(q.as_slice(), v.as_slice(), &drive, t)?.accel)
    }

    fn snap_prescribed(&self, state: &mut GeneralizedState<T>, motors: &MotorProgram, t: f64) {
        for (&p, w) in self.asm.prescribed().iter().zip(motors.prescribed_speeds::<T>(&self.asm, t)) {
            state.qdot[p] = w;
        }
    }

    /// Classical fourth-order Runge–Kutta step.
    pub fn step_rk4(&self, state: &mut GeneralizedState<T>, t: f64, h: f64, motors: &MotorProgram, wrench: &Wrench<T>) -> Result<(), DynamicsError> {
        let hh = T::of(h);
        let half = T::of(0.5 * h);
        let (q, v) = (&state.q, &state.qdot);
        let a1 = self.accel_at(q, v, motors, wrench, t)?;
        let (q2, v2) = (q + v * half, v + &a1 * half);
        let a2 = self.accel_at(&q2, &v2, motors, wrench, t + 0.5 * h)?;
        let (q3, v3) = (q + &v2 * half, v + &a2 * half);
        let a3 = self.accel_at(&q3, &v3, motors, wrench, t + 0.5 * h)?;
        let (q4, v4) = (q + &v3 * hh, v + &a3 * hh);
        let a4 = self.accel_at(&q4, &v4, motors, wrench, t + h)?;
        let sixth = T::of(h / 6.0);
        let two = T::of(2.0);
        let dq = (v + &v2 * two + &v3 * two + &v4) * sixth;
        let dv = (a1 + a2 * two + a3 * two + a4) * sixth;
        state.q += dq;
        state.qdot += dv;
        self.snap_prescribed(state, motors, t + h);
        Ok(())
    }

    /// Backward Euler step solved for the end velocity by a quasi-Newton
    /// iteration on `M_ff + h·(C_ff + β·K_ff) + h²·K_ff`, where `C` is the
    /// linearized drag. Returns the iteration count.
    pub fn step_implicit(
        &self,
        state: &mut GeneralizedState<T>,
        t: f64,
        cfg: &IntegratorConfig,
        motors: &MotorProgram,
        wrench: &Wrench<T>,
    ) -> Result<usize, DynamicsError> {
        let h = cfg.dt;
        let hh = T::of(h);
        let t1 = t + h;
        let free = self.asm.free();
        let kff = self.stiffness_free();
        let c = hh * self.params.damping_time + hh * hh;
        let mut v = state.qdot.clone();
        for (&p, w) in self.asm.prescribed().iter().zip(motors.prescribed_speeds::<T>(&self.asm, t1)) {
            v[p] = w;
        }
        let mut drive: Drive<T> = motors.drive(&self.asm, t1);
        drive.root_wrench = *wrench;
        for iter in 1..=cfg.newton_max_iterations {
            let q1 = &state.q + &v * hh;
            let e = self.evaluate_with(q1.as_slice(), v.as_slice(), &drive, t1, true)?;
            let r = DVector::from_fn(free.len(), |i, _| {
                let k = free[i];
                v[k] - state.qdot[k] - hh * e.accel[k]
            });
            let scale = free.iter().fold(T::one(), |m, &k| m.max(v[k].abs()));
            if !r.iter().all(|x| x.is_finite()) {
                return Err(diverged(t1, "non-finite Newton residual", state));
            }
            if r.iter().fold(T::zero(), |m, x| m.max(x.abs())) <= T::of(cfg.newton_tolerance) * scale {
                state.q = q1;
                state.qdot = v;
                return Ok(iter);
            }
            let mut n = &e.mass_free + &kff * c;
            if let Some(d) = &e.drag_free {
                n += d * hh;
            }
            let rhs = -(&e.mass_free * r);
            let dv = self.asm.partition().solve(&n, &rhs).map_err(|source| DynamicsError::SingularMass { t: t1, source })?;
            for (i, &k) in free.iter().enumerate() {
                v[k] += dv[i];
            }
        }
        Err(diverged(t1, format!("Newton iteration did not converge in {} iterations", cfg.newton_max_iterations), state))
    }

    /// Rod stiffness restricted to the free coordinates.
    pub fn stiffness_free(&self) -> DMatrix<T> {
        let k = self.stiffness();
        let free = self.asm.free();
        DMatrix::from_fn(free.len(), free.len(), |i, j| k[(free[i], free[j])])
    }

    pub fn step(
        &self,
        state: &mut GeneralizedState<T>,
        t: f64,
        cfg: &IntegratorConfig,
        motors: &MotorProgram,
        wrench: &Wrench<T>,
    ) -> Result<(), DynamicsError> {
        match cfg.kind {
            super::IntegratorKind::Rk4 => self.step_rk4(state, t, cfg.dt, motors, wrench),
            super::IntegratorKind::ImplicitEuler => self.step_implicit(state, t, cfg, motors, wrench).map(|_| ()),
        }?;
        if !state.q.iter().chain(state.qdot.iter()).all(|x| x.is_finite()) {
            return Err(diverged(t + cfg.dt, "non-finite state", state));
        }
        Ok(())
    }
}

/// Callbacks run by [`simulate`] around the integrator.
pub trait Supervisor {
    /// Control period in seconds, `None` for open loop.
    fn control_period(&self) -> Option<f64> {
        None
    }

    /// Called at `t = 0` and every control period with the current state.
    fn control(&mut self, _t: f64, _state: &GeneralizedState<f64>, _motors: &mut MotorProgram) -> Result<(), DynamicsError> {
        Ok(())
    }

    /// External wrench on the root body about its origin, world axes.
    fn root_wrench(&self, _t: f64) -> Wrench<f64> {
        Wrench::zero()
    }

    /// Extra log columns and their current values.
    fn columns(&self) -> Vec<String> {
        Vec::new()
    }

    fn values(&self) -> Vec<f64> {
        Vec::new()
    }
}

pub struct OpenLoop;

impl Supervisor for OpenLoop {}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub integrator: IntegratorConfig,
    pub t_end: f64,
    /// Logging rate in Hz.
    pub log_rate: f64,
    /// Also log every generalized coordinate and velocity.
    #[serde(default)]
    pub log_coordinates: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { integrator: IntegratorConfig::default(), t_end: 1.0, log_rate: 50.0, log_coordinates: true }
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub log: TimeSeriesLog,
    pub state: GeneralizedState<f64>,
    pub motors: MotorProgram,
}

pub const SHELL_COLUMNS: [&str; 12] = ["x", "y", "z", "roll", "pitch", "yaw", "vx", "vy", "vz", "roll_rate", "pitch_rate", "yaw_rate"];

/// Standard log columns of a model.
pub fn log_columns(model: &Model<f64>, coordinates: bool) -> Vec<String> {
    let n = if coordinates { model.asm.dof() } else { 0 };
    let mut c = vec!["t".to_string()];
    c.extend(SHELL_COLUMNS.iter().map(|s| s.to_string()));
    c.extend((1..=12).map(|m| format!("w{m}")));
    c.extend((1..=12).map(|m| format!("tau{m}")));
    c.extend(["kinetic", "elastic", "potential"].map(String::from));
    c.extend((0..n).map(|k| format!("q{k}")));
    c.extend((0..n).map(|k| format!("qd{k}")));
    c
}

fn log_row(
    model: &Model<f64>,
    state: &GeneralizedState<f64>,
    t: f64,
    motors: &MotorProgram,
    wrench: &Wrench<f64>,
    coordinates: bool,
) -> Result<Vec<f64>, DynamicsError> {
    let q = &state.q;
    let v = &state.qdot;
    let mut row = vec![t, q[3], q[4], q[5], q[0], q[1], q[2], v[3], v[4], v[5], v[0], v[1], v[2]];
    let mut drive: Drive<f64> = motors.drive(&model.asm, t);
    drive.root_wrench = *wrench;
    let e = model.evaluate(q.as_slice(), v.as_slice(), &drive, t)?;
    let mut tau = [0.0; 12];
    for slot in model.asm.motors() {
        if let Some(k) = model.asm.prescribed().iter().position(|&p| p == slot.dof) {
            tau[slot.id - 1] = e.reaction[k];
        }
    }
    row.extend((1..=12).map(|m| if model.asm.motor(m).is_some() { motors.speed(m, t) } else { 0.0 }));
    row.extend(tau);
    let en = model.energy(state);
    row.extend([en.kinetic, en.elastic, en.gravitational]);
    if coordinates {
        row.extend(q.iter());
        row.extend(v.iter());
    }
    Ok(row)
}

/// Integrates from `t = 0` to `cfg.t_end`, logging at `cfg.log_rate` and
/// calling the supervisor at its control rate (zero-order hold).
pub fn simulate(
    model: &Model<f64>,
    initial: GeneralizedState<f64>,
    mut motors: MotorProgram,
    sup: &mut dyn Supervisor,
    cfg: &SimulationConfig,
) -> Result<Simulation, DynamicsError> {
    model.check(&initial)?;
    let dt = cfg.integrator.dt;
    let steps = (cfg.t_end / dt).round() as usize;
    let every = |period: f64| ((period / dt).round() as usize).max(1);
    let log_every = every(1.0 / cfg.log_rate);
    let control_every = sup.control_period().map(every);
    let mut columns = log_columns(model, cfg.log_coordinates);
    columns.extend(sup.columns());
    let mut log = TimeSeriesLog::new(columns);
    let mut state = initial;
    for n in 0..=steps {
        let t = n as f64 * dt;
        if let Some(c) = control_every {
            if n % c == 0 && n < steps {
                sup.control(t, &state, &mut motors)?;
            }
        }
        if n % log_every == 0 {
            let mut row = log_row(model, &state, t, &motors, &sup.root_wrench(t), cfg.log_coordinates)?;
            row.extend(sup.values());
            log.push(row).map_err(|e| DynamicsError::Log { t, reason: e.to_string() })?;
        }
        if n == steps {
            break;
        }
        if state.q[1].abs() > 80f64.to_radians() {
            return Err(diverged(t, "shell pitch beyond 80 degrees (Euler-angle singularity)", &state));
        }
        model.step(&mut state, t, &cfg.integrator, &motors, &sup.root_wrench(t))?;
    }
    Ok(Simulation { log, state, motors })
}
