//! Shell-only model, flat-output PD law and thrust allocation.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Model, RPM};
use crate::hydro::BuoyancyModel;
use crate::kinematics::zodiaq::{face_table, ZodiaqParams, PAIRS};
use crate::kinematics::GeneralizedState;
use crate::se3::{coad, euler_rate_matrix, rotation_zyx, wrap_angle, Pose, Wrench};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("motor M{motor}: |ω| = {speed} rad/s exceeds ω_max = {limit} rad/s")]
    SpeedCap { motor: usize, speed: f64, limit: f64 },
    #[error("allocation matrix is singular (condition number {condition:e})")]
    SingularAllocation { condition: f64 },
    #[error("pitch {pitch_deg:.1}° is too close to the Euler-angle singularity")]
    Gimbal { pitch_deg: f64 },
    #[error("shell inertia is not positive definite")]
    NotPositiveDefinite,
    #[error("pair ({a}, {b}): {reason}")]
    Pair { a: usize, b: usize, reason: String },
}

/// Controller and shell-only plant parameters as they appear in a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    /// Thrust per squared speed, N·s²/rad².
    pub thrust_coefficient: f64,
    /// Reaction moment per squared speed, N·m·s²/rad².
    pub reaction_coefficient: f64,
    /// Spin direction of each motor, +1 for counter-clockwise seen from
    /// outside. Empty selects the best-conditioned pattern automatically.
    pub spin: Vec<i8>,
    pub pairs: Vec<[usize; 2]>,
    pub omega_max_rpm: f64,
    pub cap_fraction: f64,
    /// Proportional gains on (x, y, z, ψ).
    pub kp: [f64; 4],
    /// Derivative gains on (x, y, z, ψ).
    pub kd: [f64; 4],
    /// Control rate, Hz.
    pub rate: f64,
    /// Time constant of the low-pass filter on measured rates, s. Zero
    /// feeds the raw rates to the controller.
    pub rate_filter: f64,
    /// Quadratic drag of the shell-only plant (angular; linear).
    pub drag: [f64; 6],
    /// Weight minus buoyancy assumed by the controller, N.
    pub net_weight: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            thrust_coefficient: 4.878e-4,
            reaction_coefficient: 7.38e-5,
            spin: Vec::new(),
            pairs: PAIRS.iter().map(|&(a, b)| [a, b]).collect(),
            omega_max_rpm: 130.0,
            cap_fraction: 0.8,
            kp: [1.0; 4],
            kd: [2.0; 4],
            rate: 10.0,
            rate_filter: 0.5,
            drag: [0.4385, 0.4385, 0.4385, 60.08, 43.65, 44.70],
            net_weight: 0.0,
        }
    }
}

impl ControlParams {
    pub fn omega_max(&self) -> f64 {
        self.omega_max_rpm * RPM
    }

    pub fn cap(&self) -> f64 {
        self.cap_fraction * self.omega_max()
    }
}

/// Shell-only rigid-body model about the centre of mass.
#[derive(Clone, Debug, PartialEq)]
pub struct SimpleModel {
    /// Spatial inertia about the centre of mass, added mass included.
    pub inertia: Matrix6<f64>,
    pub drag: Matrix6<f64>,
    pub weight: f64,
    pub net_weight: f64,
    /// Distance of the centre of buoyancy above the centre of mass.
    pub cg_drop: f64,
    /// Centre of mass relative to the geometric centre, body axes.
    pub com: Vector3<f64>,
    /// Face centres relative to the centre of mass.
    pub arms: [Vector3<f64>; 12],
    pub normals: [Vector3<f64>; 12],
    pub thrust_coefficient: f64,
    pub reaction_coefficient: f64,
    pub spin: [f64; 12],
    pub pairs: Vec<(usize, usize)>,
    pub omega_max: f64,
    pub cap: f64,
}

/// Shell pose (Euler angles, position) and body twist about the centre of mass.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SimpleState {
    /// (φ, θ, ψ, x, y, z); position of the centre of mass.
    pub pose: Vector6<f64>,
    /// (angular; linear) velocity in body axes.
    pub twist: Vector6<f64>,
}

impl SimpleState {
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_zyx(self.pose[0], self.pose[1], self.pose[2])
    }

    /// Flat outputs (x, y, z, ψ).
    pub fn flat(&self) -> Vector4<f64> {
        Vector4::new(self.pose[3], self.pose[4], self.pose[5], self.pose[2])
    }

    /// Rates of the flat outputs.
    pub fn flat_rate(&self) -> Vector4<f64> {
        let v = self.rotation() * self.twist.fixed_rows::<3>(3);
        let e = euler_rate_matrix(self.pose[0], self.pose[1]);
        let rates = e.try_inverse().unwrap_or_else(Matrix3::identity) * self.twist.fixed_rows::<3>(0);
        Vector4::new(v.x, v.y, v.z, rates.z)
    }

    /// Shell state of the full model, moved to the centre of mass `com`
    /// (geometric-centre frame).
    pub fn from_twin(state: &GeneralizedState<f64>, com: &Vector3<f64>) -> Self {
        let q = &state.q;
        let qd = &state.qdot;
        let r = rotation_zyx(q[0], q[1], q[2]);
        let w = euler_rate_matrix(q[0], q[1]) * Vector3::new(qd[0], qd[1], qd[2]);
        let v0 = r.transpose() * Vector3::new(qd[3], qd[4], qd[5]);
        let p = Vector3::new(q[3], q[4], q[5]) + r * com;
        let v = v0 + w.cross(com);
        Self { pose: Vector6::new(q[0], q[1], q[2], p.x, p.y, p.z), twist: Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z) }
    }
}

/// Spin patterns with equal direction inside each pair; the first pair is
/// fixed to +1 since a global flip only mirrors the moment columns.
fn spin_candidates(pairs: &[(usize, usize)]) -> impl Iterator<Item = [f64; 12]> + '_ {
    (0..1u32 << (pairs.len() - 1)).map(move |bits| {
        let mut s = [1.0; 12];
        for (j, &(a, b)) in pairs.iter().enumerate().skip(1) {
            let sign = if bits >> (j - 1) & 1 == 1 { -1.0 } else { 1.0 };
            s[a - 1] = sign;
            s[b - 1] = sign;
        }
        s
    })
}

pub fn condition_number(a: &Matrix6<f64>) -> f64 {
    let sv = a.singular_values();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

impl SimpleModel {
    /// Shell-only model of a build. Mass, inertia and added mass are the
    /// full model's locked inertia at rest, moved to the centre of mass.
    pub fn from_twin(build: &ZodiaqParams, twin: &Model<f64>, params: &ControlParams) -> Result<Self, ControlError> {
        let asm = &twin.asm;
        let q = vec![0.0; asm.dof()];
        let m = twin.mass_matrix(&q);
        let root = Matrix6::from_fn(|i, j| m[(i, j)]);
        let b = BuoyancyModel::of(asm, &q, &twin.params.hydro);
        let com = b.center_of_gravity;
        let to_com = Pose::new(Matrix3::identity(), com).adjoint();
        let inertia = to_com.transpose() * root * to_com;
        let faces = face_table(build.edge_length);
        let arms = std::array::from_fn(|i| faces.faces[i].center() - com);
        let normals = std::array::from_fn(|i| faces.faces[i].normal());
        let pairs: Vec<(usize, usize)> = params.pairs.iter().map(|p| (p[0], p[1])).collect();
        let mut model = Self {
            inertia,
            drag: Matrix6::from_diagonal(&Vector6::from(params.drag)),
            weight: b.mass * twin.params.hydro.gravity,
            net_weight: params.net_weight,
            cg_drop: (b.center_of_buoyancy - b.center_of_gravity).z,
            com,
            arms,
            normals,
            thrust_coefficient: params.thrust_coefficient,
            reaction_coefficient: params.reaction_coefficient,
            spin: [1.0; 12],
            pairs,
            omega_max: params.omega_max(),
            cap: params.cap(),
        };
        model.check_pairs()?;
        if model.inertia.cholesky().is_none() {
            return Err(ControlError::NotPositiveDefinite);
        }
        if params.spin.is_empty() {
            model.spin = model.best_spin()?;
        } else {
            model.spin = std::array::from_fn(|i| f64::from(params.spin.get(i).copied().unwrap_or(1).signum()));
        }
        allocation_matrix(&model)?;
        Ok(model)
    }

    fn check_pairs(&self) -> Result<(), ControlError> {
        for &(a, b) in &self.pairs {
            let fail = |reason: &str| Err(ControlError::Pair { a, b, reason: reason.into() });
            if !(1..=12).contains(&a) || !(1..=12).contains(&b) || a == b {
                return fail("motor ids must be distinct and within 1..=12");
            }
            if (self.normals[a - 1] + self.normals[b - 1]).norm() > 1e-9 {
                return fail("faces are not antiparallel");
            }
        }
        Ok(())
    }

    /// Spin pattern giving the best-conditioned allocation matrix.
    pub fn best_spin(&self) -> Result<[f64; 12], ControlError> {
        let mut best: Option<([f64; 12], f64)> = None;
        for s in spin_candidates(&self.pairs) {
            let trial = Self { spin: s, ..self.clone() };
            let c = condition_number(&raw_allocation(&trial));
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((s, c));
            }
        }
        match best {
            Some((s, c)) if c.is_finite() => Ok(s),
            _ => Err(ControlError::SingularAllocation { condition: f64::INFINITY }),
        }
    }

    fn restoring(&self, r: &Matrix3<f64>) -> Vector6<f64> {
        let up = r.transpose() * Vector3::z();
        let buoyancy = self.weight - self.net_weight;
        let f = up * (buoyancy - self.weight);
        let m = Vector3::new(0.0, 0.0, self.cg_drop).cross(&(up * buoyancy));
        Vector6::new(m.x, m.y, m.z, f.x, f.y, f.z)
    }

    fn drag_wrench(&self, twist: &Vector6<f64>) -> Vector6<f64> {
        let s = twist.map(|x| x.abs().sqrt());
        -(self.drag * s.component_mul(twist)).component_mul(&s)
    }

    /// Passive body wrench: hydrostatics, drag and the velocity-product term.
    pub fn passive_wrench(&self, state: &SimpleState) -> Vector6<f64> {
        self.restoring(&state.rotation()) + self.drag_wrench(&state.twist) + coad(&state.twist, &(self.inertia * state.twist))
    }
}

/// Wrench of the twelve motors about the centre of mass, body axes.
pub fn motor_wrench(omega: &[f64; 12], model: &SimpleModel) -> Result<Wrench<f64>, ControlError> {
    let mut total = Wrench::zero();
    for (i, &w) in omega.iter().enumerate() {
        if w.abs() > model.omega_max {
            return Err(ControlError::SpeedCap { motor: i + 1, speed: w.abs(), limit: model.omega_max });
        }
        let n = model.normals[i];
        let f = -n * (model.thrust_coefficient * w * w);
        let reaction = -n * (w.signum() * model.reaction_coefficient * w * w);
        total += Wrench::new(model.arms[i].cross(&f) + reaction, f);
    }
    Ok(total)
}

fn raw_allocation(model: &SimpleModel) -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    for (j, &(m, _)) in model.pairs.iter().enumerate() {
        let mut omega = [0.0; 12];
        omega[m - 1] = model.spin[m - 1];
        let w = motor_wrench(&omega, model).expect("unit speed is below the cap");
        a.set_column(j, &w.to_vector());
    }
    a
}

/// `F = A·Ω` with `Ω_j = ω_a² − ω_b²` for pair `j = (a, b)`.
pub fn allocation_matrix(model: &SimpleModel) -> Result<Matrix6<f64>, ControlError> {
    let a = raw_allocation(model);
    let condition = condition_number(&a);
    if !condition.is_finite() || condition > 1e12 {
        return Err(ControlError::SingularAllocation { condition });
    }
    Ok(a)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Allocation {
    pub omega: [f64; 12],
    pub throttle: Vector6<f64>,
    /// Pairs whose speed was clipped at the cap.
    pub saturated: usize,
}

/// Pair throttles `Ω = A⁻¹·F` and capped motor speeds; at most one motor of
/// each pair spins, in its predefined direction.
pub fn allocate(wrench: &Vector6<f64>, model: &SimpleModel, a_inv: &Matrix6<f64>) -> Allocation {
    allocate_throttle(&(a_inv * wrench), model)
}

/// Motor speeds for given pair throttles. Speeds within a relative 1e-12 of
/// the cap are snapped onto it.
pub fn allocate_throttle(throttle: &Vector6<f64>, model: &SimpleModel) -> Allocation {
    let mut omega = [0.0; 12];
    let mut saturated = 0;
    for (j, &(a, b)) in model.pairs.iter().enumerate() {
        let o = throttle[j];
        if o == 0.0 {
            continue;
        }
        let motor = if o > 0.0 { a } else { b };
        let mut speed = o.abs().sqrt();
        if speed >= model.cap * (1.0 - 1e-12) {
            saturated += 1;
            speed = model.cap;
        }
        omega[motor - 1] = model.spin[motor - 1] * speed;
    }
    Allocation { omega, throttle: *throttle, saturated }
}

/// Adds as much of `extra` to `base` as the throttle limit allows. If `base`
/// alone is out of bounds it is scaled down and nothing is added. Returns
/// the throttles and the fraction of `extra` kept.
pub fn prioritize(base: &Vector6<f64>, extra: &Vector6<f64>, limit: f64) -> (Vector6<f64>, f64) {
    let peak = base.amax();
    if peak >= limit {
        return (base * (limit / peak), 0.0);
    }
    let mut kept: f64 = 1.0;
    for (r, p) in base.iter().zip(extra.iter()) {
        if *p != 0.0 {
            kept = kept.min((limit - r * p.signum()) / p.abs());
        }
    }
    (base + extra * kept, kept)
}

/// Reference sample of the flat outputs (x, y, z, ψ).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FlatSample {
    pub position: Vector4<f64>,
    pub rate: Vector4<f64>,
    pub accel: Vector4<f64>,
    /// When set, x and y are not fed back and `accel` passes through.
    pub planar_open_loop: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gains {
    pub kp: Vector4<f64>,
    pub kd: Vector4<f64>,
}

impl Gains {
    pub fn from_params(p: &ControlParams) -> Self {
        Self { kp: Vector4::from(p.kp), kd: Vector4::from(p.kd) }
    }
}

/// `ν = σ̈_ref + K_d(σ̇_ref − σ̇) + K_p(σ_ref − σ)`, with the ψ error wrapped.
pub fn flat_pd_controller(sigma: &Vector4<f64>, sigma_rate: &Vector4<f64>, reference: &FlatSample, gains: &Gains) -> Vector4<f64> {
    let mut e = reference.position - sigma;
    e[3] = wrap_angle(e[3]);
    let mut nu = reference.accel + gains.kd.component_mul(&(reference.rate - sigma_rate)) + gains.kp.component_mul(&e);
    if reference.planar_open_loop {
        nu[0] = reference.accel[0];
        nu[1] = reference.accel[1];
    }
    nu
}

/// Desired body wrench at the centre of mass for the flat accelerations
/// `ν = (ẍ, ÿ, z̈, ψ̈)`; roll and pitch moments are left to passive stability.
pub fn wrench_from_nu(nu: &Vector4<f64>, state: &SimpleState, model: &SimpleModel) -> Vector6<f64> {
    let r = state.rotation();
    let rt = r.transpose();
    let lin = rt * Vector3::new(nu[0], nu[1], nu[2]);
    let ang = rt * Vector3::new(0.0, 0.0, nu[3]);
    let accel = Vector6::new(ang.x, ang.y, ang.z, lin.x, lin.y, lin.z);
    let mut f = model.inertia * accel - model.passive_wrench(state);
    f[0] = 0.0;
    f[1] = 0.0;
    f
}

/// Time derivative of the shell-only plant under motor speeds `omega`.
pub fn simple_forward(state: &SimpleState, omega: &[f64; 12], model: &SimpleModel) -> Result<SimpleState, ControlError> {
    simple_forward_with(state, omega, model, &Vector6::zeros())
}

/// As [`simple_forward`] with an extra body wrench at the centre of mass.
pub fn simple_forward_with(state: &SimpleState, omega: &[f64; 12], model: &SimpleModel, extra: &Vector6<f64>) -> Result<SimpleState, ControlError> {
    let (roll, pitch) = (state.pose[0], state.pose[1]);
    if pitch.abs() > 80f64.to_radians() {
        return Err(ControlError::Gimbal { pitch_deg: pitch.to_degrees() });
    }
    let r = state.rotation();
    let w = state.twist.fixed_rows::<3>(0).into_owned();
    let v = state.twist.fixed_rows::<3>(3).into_owned();
    let euler = euler_rate_matrix(roll, pitch).try_inverse().ok_or(ControlError::Gimbal { pitch_deg: pitch.to_degrees() })? * w;
    let p = r * v;
    let f = motor_wrench(omega, model)?.to_vector() + model.passive_wrench(state) + extra;
    let accel = model.inertia.cholesky().expect("inertia is SPD").solve(&f);
    Ok(SimpleState { pose: Vector6::new(euler.x, euler.y, euler.z, p.x, p.y, p.z), twist: accel })
}

/// One classical Runge–Kutta step of the shell-only plant.
pub fn simple_step(state: &SimpleState, omega: &[f64; 12], model: &SimpleModel, extra: &Vector6<f64>, h: f64) -> Result<SimpleState, ControlError> {
    let add = |s: &SimpleState, d: &SimpleState, k: f64| SimpleState { pose: s.pose + d.pose * k, twist: s.twist + d.twist * k };
    let k1 = simple_forward_with(state, omega, model, extra)?;
    let k2 = simple_forward_with(&add(state, &k1, 0.5 * h), omega, model, extra)?;
    let k3 = simple_forward_with(&add(state, &k2, 0.5 * h), omega, model, extra)?;
    let k4 = simple_forward_with(&add(state, &k3, h), omega, model, extra)?;
    let d =
        SimpleState { pose: (k1.pose + k2.pose * 2.0 + k3.pose * 2.0 + k4.pose) / 6.0, twist: (k1.twist + k2.twist * 2.0 + k3.twist * 2.0 + k4.twist) / 6.0 };
    Ok(add(state, &d, h))
}

/// One control decision and its intermediate quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub reference: FlatSample,
    pub nu: Vector4<f64>,
    pub wrench: Vector6<f64>,
    /// Fraction of the planar request that fit under the cap.
    pub planar_scale: f64,
    pub allocation: Allocation,
}

pub const DECISION_COLUMNS: [&str; 38] = [
    "ref_x",
    "ref_y",
    "ref_z",
    "ref_psi",
    "nu_x",
    "nu_y",
    "nu_z",
    "nu_psi",
    "fg_mx",
    "fg_my",
    "fg_mz",
    "fg_fx",
    "fg_fy",
    "fg_fz",
    "omega_p1",
    "omega_p2",
    "omega_p3",
    "omega_p4",
    "omega_p5",
    "omega_p6",
    "saturated",
    "planar_scale",
    "err_x",
    "err_y",
    "err_z",
    "err_psi",
    "cmd1",
    "cmd2",
    "cmd3",
    "cmd4",
    "cmd5",
    "cmd6",
    "cmd7",
    "cmd8",
    "cmd9",
    "cmd10",
    "cmd11",
    "cmd12",
];

impl Decision {
    pub fn values(&self, state: &SimpleState) -> Vec<f64> {
        let mut v: Vec<f64> = self.reference.position.iter().copied().collect();
        v.extend(self.nu.iter());
        v.extend(self.wrench.iter());
        v.extend(self.allocation.throttle.iter());
        v.push(self.allocation.saturated as f64);
        v.push(self.planar_scale);
        let mut e = self.reference.position - state.flat();
        e[3] = wrap_angle(e[3]);
        v.extend(e.iter());
        v.extend(self.allocation.omega);
        v
    }
}

/// A flat-output reference trajectory.
pub trait Reference: Send + Sync {
    fn sample(&self, t: f64) -> FlatSample;
}

/// First-order filter on the shell twist, stepped once per control tick.
/// The flagella shake the shell at their spin frequency and the derivative
/// terms would otherwise spend the whole throttle chasing that.
#[derive(Clone, Debug)]
pub struct RateFilter {
    alpha: f64,
    twist: Option<Vector6<f64>>,
}

impl RateFilter {
    pub fn new(time_constant: f64, period: f64) -> Self {
        Self { alpha: period / (time_constant + period), twist: None }
    }

    pub fn smooth(&mut self, state: &SimpleState) -> SimpleState {
        let twist = match self.twist {
            Some(w) => w + (state.twist - w) * self.alpha,
            None => state.twist,
        };
        self.twist = Some(twist);
        SimpleState { twist, ..*state }
    }
}

/// The PD law, wrench map and allocation run together.
#[derive(Clone, Debug)]
pub struct FlatController {
    pub model: SimpleModel,
    pub gains: Gains,
    pub a_inv: Matrix6<f64>,
}

impl FlatController {
    pub fn new(model: SimpleModel, gains: Gains) -> Result<Self, ControlError> {
        let a = allocation_matrix(&model)?;
        let a_inv = a.try_inverse().ok_or(ControlError::SingularAllocation { condition: f64::INFINITY })?;
        Ok(Self { model, gains, a_inv })
    }

    /// Depth and heading are served first; the planar part of the request
    /// is scaled into whatever throttle is left.
    pub fn decide(&self, state: &SimpleState, reference: FlatSample) -> Decision {
        let nu = flat_pd_controller(&state.flat(), &state.flat_rate(), &reference, &self.gains);
        let wrench = wrench_from_nu(&nu, state, &self.model);
        let r = state.rotation();
        let vz = (r * state.twist.fixed_rows::<3>(3)).z;
        let mut level = *state;
        level.twist.fixed_rows_mut::<3>(3).copy_from(&(r.transpose() * Vector3::new(0.0, 0.0, vz)));
        let regulation = wrench_from_nu(&Vector4::new(0.0, 0.0, nu[2], nu[3]), &level, &self.model);
        let base = self.a_inv * regulation;
        let (throttle, planar_scale) = prioritize(&base, &(self.a_inv * wrench - base), self.model.cap * self.model.cap);
        let allocation = allocate_throttle(&throttle, &self.model);
        Decision { reference, nu, wrench, planar_scale, allocation }
    }
}
