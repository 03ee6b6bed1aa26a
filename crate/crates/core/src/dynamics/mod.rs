//! Equations of motion of an assembly with prescribed motor joints.

mod integrate;
mod motor;
mod statics;

pub use integrate::*;
pub use motor::*;

use std::ops::Range;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydro::{accumulate_quadratic, hydrostatic_wrench, rod_drag_tangent, rod_load_density, shell_drag_tangent, shell_load, HydroParams};
use crate::kinematics::{sweep, Assembly, BodyTwist, GeneralizedState, LinkBody, Site, SparseJacobian};
use crate::linalg::NotPositiveDefinite;
use crate::real::{Dual, Real};
use crate::se3::{coad, Pose, Twist, Wrench};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("mass matrix is singular at t = {t}: {source}")]
    SingularMass { t: f64, source: NotPositiveDefinite },
    #[error("integration diverged at t = {t}: {reason}")]
    Diverged { t: f64, reason: String, state: Vec<f64> },
    #[error("state has {got} coordinates, assembly has {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("motor M{motor}: speed {speed} rad/s exceeds the limit {limit} rad/s")]
    SpeedLimit { motor: usize, speed: f64, limit: f64 },
    #[error("log at t = {t}: {reason}")]
    Log { t: f64, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams<T: Real> {
    pub hydro: HydroParams<T>,
    /// Kelvin–Voigt time constant `β` of the rod damping `D = β·K`.
    pub damping_time: T,
}

impl<T: Real> Default for DynamicsParams<T> {
    fn default() -> Self {
        Self { hydro: HydroParams::default(), damping_time: T::of(0.05) }
    }
}

/// Assembly bundled with its parameters and precomputed rod stiffness.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub asm: Assembly<T>,
    pub params: DynamicsParams<T>,
    stiffness: Vec<(Range<usize>, DMatrix<T>)>,
}

/// Inputs held constant over one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Drive<T: Real> {
    /// Accelerations of the prescribed coordinates, in `Assembly::prescribed` order.
    pub prescribed_accel: Vec<T>,
    /// Extra wrench on the root body about its origin, world axes.
    pub root_wrench: Wrench<T>,
    /// Extra generalized force on all coordinates.
    pub generalized_force: Option<DVector<T>>,
}

impl<T: Real> Drive<T> {
    pub fn idle(asm: &Assembly<T>) -> Self {
        Self { prescribed_accel: vec![T::zero(); asm.prescribed().len()], root_wrench: Wrench::zero(), generalized_force: None }
    }
}

/// Result of one evaluation of the equations of motion.
#[derive(Clone, Debug)]
pub struct Evaluation<T: Real> {
    /// Full acceleration vector; prescribed entries copy the drive.
    pub accel: DVector<T>,
    /// Mass matrix restricted to the free coordinates.
    pub mass_free: DMatrix<T>,
    /// Generalized force the motors exert on their joints.
    pub reaction: Vec<T>,
    /// Generalized applied, elastic and velocity-product force (`rhs`).
    pub force: DVector<T>,
    /// Linearized drag restricted to the free coordinates, when requested.
    pub drag_free: Option<DMatrix<T>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub kinetic: f64,
    pub elastic: f64,
    pub gravitational: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.elastic + self.gravitational
    }
}

struct Element<T: Real> {
    link: usize,
    site: Site,
    pose: Pose<T>,
    jac: SparseJacobian<T>,
}

impl<T: Real> Model<T> {
    pub fn new(asm: Assembly<T>, params: DynamicsParams<T>) -> Self {
        let stiffness = (0..asm.link_count()).filter_map(|l| asm.rod_stiffness(l).map(|k| (asm.rod_dofs(l), k))).collect();
        Self { asm, params, stiffness }
    }

    /// Block-diagonal rod stiffness over all coordinates.
    pub fn stiffness(&self) -> DMatrix<T> {
        let n = self.asm.dof();
        let mut k = DMatrix::zeros(n, n);
        for (r, b) in &self.stiffness {
            k.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(b);
        }
        k
    }

    fn elastic_force(&self, q: &[T], qdot: &[T]) -> DVector<T> {
        let mut f = DVector::zeros(self.asm.dof());
        for (r, k) in &self.stiffness {
            for i in 0..r.len() {
                let mut s = T::zero();
                for j in 0..r.len() {
                    s += k[(i, j)] * (q[r.start + j] + self.params.damping_time * qdot[r.start + j]);
                }
                f[r.start + i] = s;
            }
        }
        f
    }

    /// Inertia of an element including added mass, and its weight for
    /// distributed elements.
    fn element_inertia(&self, link: usize, site: Site) -> Matrix6<T> {
        let hydro = &self.params.hydro;
        match (&self.asm.links()[link].body, site) {
            (LinkBody::Rigid(b), _) => {
                let m = b.spatial_inertia();
                if link == 0 {
                    m + hydro.shell_added_mass
                } else {
                    m
                }
            }
            (LinkBody::Soft(r), Site::Point(i)) => (r.section_inertia() + hydro.rod_added_mass(r)) * self.asm.plan(link).expect("plan").points[i].weight,
            (LinkBody::Soft(_), Site::Body) => unreachable!("rods report quadrature points"),
        }
    }

    fn element_load(&self, link: usize, site: Site, pose: &Pose<T>, eta: &Vector6<T>) -> Wrench<T> {
        let hydro = &self.params.hydro;
        let twist = Twist::from_vector(eta);
        match (&self.asm.links()[link].body, site) {
            (LinkBody::Rigid(b), _) if link == 0 => shell_load(pose, &twist, b, hydro),
            (LinkBody::Rigid(b), _) => hydrostatic_wrench(pose, b, hydro),
            (LinkBody::Soft(r), Site::Point(i)) => {
                let w = self.asm.plan(link).expect("plan").points[i].weight;
                let d = rod_load_density(pose, &twist, hydro, r);
                Wrench::new(d.moment * w, d.force * w)
            }
            (LinkBody::Soft(_), Site::Body) => unreachable!("rods report quadrature points"),
        }
    }

    fn elements(&self, q: &[T]) -> Vec<Element<T>> {
        let mut out = Vec::with_capacity(self.asm.link_count() * 4);
        sweep(&self.asm, q, SparseJacobian::<T>::default(), |link, site, pose, jac| {
            out.push(Element { link, site, pose: *pose, jac: jac.clone() });
        });
        out
    }

    /// Body twists `J·q̇` and velocity-product accelerations `J̇·q̇` of
    /// every element, from one dual-number sweep seeded with `q + ε·q̇`.
    fn velocity_terms(&self, q: &[T], qdot: &[T]) -> Vec<(Vector6<T>, Vector6<T>)> {
        let qd: Vec<Dual<T>> = q.iter().zip(qdot).map(|(&a, &b)| Dual::new(a, b)).collect();
        let rates: Vec<Dual<T>> = qdot.iter().map(|&v| Dual::constant(v)).collect();
        let mut out = Vec::with_capacity(self.asm.link_count() * 4);
        sweep(&self.asm, &qd, BodyTwist::new(&rates), |_, _, _, p| {
            out.push((p.twist.map(|d| d.re), p.twist.map(|d| d.eps)));
        });
        out
    }

    /// Generalized mass matrix including added mass.
    pub fn mass_matrix(&self, q: &[T]) -> DMatrix<T> {
        let n = self.asm.dof();
        let mut m = DMatrix::zeros(n, n);
        for e in self.elements(q) {
            accumulate_quadratic(&mut m, &e.jac, &self.element_inertia(e.link, e.site));
        }
        m
    }

    pub fn check(&self, state: &GeneralizedState<T>) -> Result<(), DynamicsError> {
        self.asm.check_state(state).map_err(|_| DynamicsError::StateLength { expected: self.asm.dof(), got: state.q.len() })
    }

    /// Solves `M_ff·q̈_f = τ_f − M_fp·q̈_p − (h + K·q + D·q̇)_f`.
    pub fn evaluate(&self, q: &[T], qdot: &[T], drive: &Drive<T>, t: f64) -> Result<Evaluation<T>, DynamicsError> {
        self.evaluate_with(q, qdot, drive, t, false)
    }

    /// As [`Model::evaluate`], optionally also linearizing the drag.
    pub fn evaluate_with(&self, q: &[T], qdot: &[T], drive: &Drive<T>, t: f64, drag: bool) -> Result<Evaluation<T>, DynamicsError> {
        let n = self.asm.dof();
        let mut c = if drag { Some(DMatrix::zeros(n, n)) } else { None };
        let elements = self.elements(q);
        let vel = self.velocity_terms(q, qdot);
        let mut m = DMatrix::zeros(n, n);
        let mut rhs = -self.elastic_force(q, qdot);
        if let Some(f) = &drive.generalized_force {
            rhs += f;
        }
        for (e, (eta, acc)) in elements.iter().zip(&vel) {
            let mi = self.element_inertia(e.link, e.site);
            accumulate_quadratic(&mut m, &e.jac, &mi);
            let mut load = self.element_load(e.link, e.site, &e.pose, eta).to_vector();
            if e.link == 0 {
                let rt = e.pose.rotation.transpose();
                let w = &drive.root_wrench;
                load += Wrench::new(rt * w.moment, rt * w.force).to_vector();
            }
            if let Some(c) = c.as_mut() {
                let tw = Twist::from_vector(eta);
                let ce = match (&self.asm.links()[e.link].body, e.site) {
                    (LinkBody::Soft(r), Site::Point(i)) => {
                        Some(rod_drag_tangent(&tw, &self.params.hydro, r) * self.asm.plan(e.link).expect("plan").points[i].weight)
                    }
                    (LinkBody::Rigid(_), _) if e.link == 0 => Some(shell_drag_tangent(&tw, &self.params.hydro)),
                    _ => None,
                };
                if let Some(ce) = ce {
                    accumulate_quadratic(c, &e.jac, &ce);
                }
            }
            let generalized = load - mi * acc + coad(eta, &(mi * eta));
            for (d, c) in e.jac.dofs.iter().zip(&e.jac.columns) {
                rhs[*d] += c.dot(&generalized);
            }
        }
        let free = self.asm.free();
        let pres = self.asm.prescribed();
        let mut accel = DVector::zeros(n);
        for (k, &p) in pres.iter().enumerate() {
            accel[p] = drive.prescribed_accel[k];
        }
        let mff = DMatrix::from_fn(free.len(), free.len(), |i, j| m[(free[i], free[j])]);
        let bf = DVector::from_fn(free.len(), |i, _| {
            let r = free[i];
            pres.iter().fold(rhs[r], |acc, &p| acc - m[(r, p)] * accel[p])
        });
        let af = self.asm.partition().solve(&mff, &bf).map_err(|source| DynamicsError::SingularMass { t, source })?;
        for (i, &k) in free.iter().enumerate() {
            accel[k] = af[i];
        }
        let reaction = pres.iter().map(|&p| (0..n).fold(-rhs[p], |acc, j| acc + m[(p, j)] * accel[j])).collect();
        let drag_free = c.map(|c| DMatrix::from_fn(free.len(), free.len(), |i, j| c[(free[i], free[j])]));
        Ok(Evaluation { accel, mass_free: mff, reaction, drag_free, force: rhs })
    }

    /// Free-coordinate accelerations under a motor program.
    pub fn generalized_accel(&self, state: &GeneralizedState<T>, motors: &MotorProgram, t: f64) -> Result<DVector<T>, DynamicsError> {
        self.check(state)?;
        let drive = motors.drive(&self.asm, t);
        let e = self.evaluate(state.q.as_slice(), state.qdot.as_slice(), &drive, t)?;
        Ok(DVector::from_iterator(self.asm.free().len(), self.asm.free().iter().map(|&k| e.accel[k])))
    }

    /// Kinetic (including added mass), elastic and gravitational-buoyant
    /// energy. The potential datum is `z = 0`.
    pub fn energy(&self, state: &GeneralizedState<T>) -> Energy {
        let q = state.q.as_slice();
        let g = self.params.hydro.gravity;
        let rho = self.params.hydro.water_density;
        let (mut kinetic, mut potential) = (T::zero(), T::zero());
        let qdot = state.qdot.as_slice();
        sweep(&self.asm, q, BodyTwist::new(qdot), |link, site, pose, p| {
            let mi = self.element_inertia(link, site);
            kinetic += p.twist.dot(&(mi * p.twist)) * T::of(0.5);
            match (&self.asm.links()[link].body, site) {
                (LinkBody::Rigid(b), _) => {
                    potential += g * (b.mass * pose.transform_point(&b.com).z - rho * b.volume * pose.transform_point(&b.buoyancy_center).z);
                }
                (LinkBody::Soft(r), Site::Point(i)) => {
                    let w = self.asm.plan(link).expect("plan").points[i].weight;
                    potential += g * (r.density - rho) * r.area() * w * pose.position.z;
                }
                _ => {}
            }
        });
        let k = self.stiffness();
        let elastic = (state.q.transpose() * &k * &state.q)[0] * T::of(0.5);
        Energy { kinetic: kinetic.value(), elastic: elastic.value(), gravitational: potential.value() }
    }

    /// Drag and lift on all elements as one wrench about the world origin,
    /// world axes. Hydrostatics are excluded.
    pub fn fluid_wrench(&self, q: &[T], qdot: &[T]) -> Wrench<T> {
        let mut still = self.params.hydro.clone();
        still.gravity = T::zero();
        let mut total = Wrench::zero();
        let elements = self.elements(q);
        for (e, (eta, _)) in elements.iter().zip(self.velocity_terms(q, qdot)) {
            let twist = Twist::from_vector(&eta);
            let w = match (&self.asm.links()[e.link].body, e.site) {
                (LinkBody::Soft(r), Site::Point(i)) => {
                    let wt = self.asm.plan(e.link).expect("plan").points[i].weight;
                    let d = rod_load_density(&e.pose, &twist, &still, r);
                    Wrench::new(d.moment * wt, d.force * wt)
                }
                (LinkBody::Rigid(b), _) if e.link == 0 => shell_load(&e.pose, &twist, b, &still),
                _ => continue,
            };
            let f = e.pose.rotation * w.force;
            total += Wrench::new(e.pose.rotation * w.moment + e.pose.position.cross(&f), f);
        }
        total
    }

    /// World-frame linear momentum of all bodies, fluid excluded.
    pub fn linear_momentum(&self, state: &GeneralizedState<T>) -> nalgebra::Vector3<T> {
        let mut p = nalgebra::Vector3::zeros();
        sweep(&self.asm, state.q.as_slice(), BodyTwist::new(state.qdot.as_slice()), |link, site, pose, tw| {
            let mi = match (&self.asm.links()[link].body, site) {
                (LinkBody::Rigid(b), _) => b.spatial_inertia(),
                (LinkBody::Soft(r), Site::Point(i)) => r.section_inertia() * self.asm.plan(link).expect("plan").points[i].weight,
                _ => return,
            };
            let mu = mi * tw.twist;
            p += pose.rotation * mu.fixed_rows::<3>(3);
        });
        p
    }
}
