//! Gravity, buoyancy, drag, lift and added mass.

use nalgebra::{DMatrix, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::kinematics::{sweep, Assembly, GeneralizedState, LinkBody, RigidBody, RodSpec, Site, SparseJacobian};
use crate::real::Real;
use crate::se3::{Pose, Twist, Wrench};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroParams<T: Real> {
    pub water_density: T,
    pub rod_cd_normal: T,
    pub rod_cd_tangent: T,
    pub rod_cl: T,
    pub rod_ca: T,
    /// Quadratic shell drag `D`: the wrench is `−S·D·S·η` with `S = diag(√|η|)`.
    pub shell_drag: Matrix6<T>,
    pub shell_linear_drag: Matrix6<T>,
    pub shell_added_mass: Matrix6<T>,
    /// Magnitude of gravity, acting along −z.
    pub gravity: T,
}

impl<T: Real> Default for HydroParams<T> {
    fn default() -> Self {
        let drag = Vector6::new(0.3566, 0.3566, 0.3566, 37.56, 37.56, 37.56).map(T::of);
        let added = Vector6::new(0.005, 0.005, 0.005, 5.4, 5.4, 5.4).map(T::of);
        Self {
            water_density: T::of(1000.0),
            rod_cd_normal: T::of(1.1),
            rod_cd_tangent: T::of(0.01),
            rod_cl: T::zero(),
            rod_ca: T::one(),
            shell_drag: Matrix6::from_diagonal(&drag),
            shell_linear_drag: Matrix6::zeros(),
            shell_added_mass: Matrix6::from_diagonal(&added),
            gravity: T::of(9.81),
        }
    }
}

impl<T: Real> HydroParams<T> {
    /// No fluid at all, with the given gravity.
    pub fn vacuum(gravity: T) -> Self {
        Self {
            water_density: T::zero(),
            rod_cd_normal: T::zero(),
            rod_cd_tangent: T::zero(),
            rod_cl: T::zero(),
            rod_ca: T::zero(),
            shell_drag: Matrix6::zeros(),
            shell_linear_drag: Matrix6::zeros(),
            shell_added_mass: Matrix6::zeros(),
            gravity,
        }
    }

    /// Rod added mass per unit length in the section frame (transverse only).
    pub fn rod_added_mass(&self, rod: &RodSpec<T>) -> Matrix6<T> {
        let m = self.water_density * self.rod_ca * rod.area();
        Matrix6::from_diagonal(&Vector6::new(T::zero(), T::zero(), T::zero(), T::zero(), m, m))
    }
}

fn down<T: Real>() -> Vector3<T> {
    Vector3::new(T::zero(), T::zero(), -T::one())
}

/// Load per unit length on a rod section, in the section frame. The
/// section's local x axis is the centreline tangent.
pub fn rod_load_density<T: Real>(pose: &Pose<T>, twist: &Twist<T>, params: &HydroParams<T>, rod: &RodSpec<T>) -> Wrench<T> {
    let half = T::of(0.5);
    let a = rod.area();
    let weight = (rod.density - params.water_density) * a * params.gravity;
    let mut f = pose.rotation.transpose() * down::<T>() * weight;
    let v = twist.linear;
    let vt = Vector3::new(v.x, T::zero(), T::zero());
    let vn = Vector3::new(T::zero(), v.y, v.z);
    let (nt, nn) = (v.x.abs(), (v.y * v.y + v.z * v.z).sqrt());
    let rho = params.water_density;
    let d = T::of(2.0) * rod.radius;
    let perimeter = T::of(std::f64::consts::PI) * d;
    f -= vn * (half * rho * params.rod_cd_normal * d * nn);
    f -= vt * (half * rho * params.rod_cd_tangent * perimeter * nt);
    f += Vector3::x().map(T::of).cross(&vn) * (half * rho * params.rod_cl * d * nn);
    Wrench::new(Vector3::zeros(), f)
}

/// Hydrostatic wrench of a rigid body in its body frame: weight at the
/// centre of mass and buoyancy at the centre of buoyancy.
pub fn hydrostatic_wrench<T: Real>(pose: &Pose<T>, body: &RigidBody<T>, params: &HydroParams<T>) -> Wrench<T> {
    let g = pose.rotation.transpose() * down::<T>() * params.gravity;
    Wrench::from_force_at(g * body.mass, &body.com) + Wrench::from_force_at(-g * (params.water_density * body.volume), &body.buoyancy_center)
}

/// Shell wrench: hydrostatics plus quadratic and linear drag.
pub fn shell_load<T: Real>(pose: &Pose<T>, twist: &Twist<T>, body: &RigidBody<T>, params: &HydroParams<T>) -> Wrench<T> {
    let eta = twist.to_vector();
    let s = eta.map(|x| x.abs().sqrt());
    let se = s.component_mul(&eta);
    let drag = -(params.shell_drag * se).component_mul(&s) - params.shell_linear_drag * eta;
    hydrostatic_wrench(pose, body, params) + Wrench::from_vector(&drag)
}

/// Displaced volume and centres of the whole build in a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuoyancyModel<T: Real> {
    pub displaced_volume: T,
    /// Centre of buoyancy relative to the centre of gravity, world axes.
    pub center_of_buoyancy_offset: Vector3<T>,
    /// Mass minus displaced water mass.
    pub net_mass: T,
    pub center_of_gravity: Vector3<T>,
    pub center_of_buoyancy: Vector3<T>,
    pub mass: T,
}

impl<T: Real> BuoyancyModel<T> {
    pub fn of(asm: &Assembly<T>, q: &[T], params: &HydroParams<T>) -> Self {
        let (mut mass, mut volume) = (T::zero(), T::zero());
        let (mut mm, mut mv) = (Vector3::zeros(), Vector3::zeros());
        sweep(asm, q, (), |l, site, g, _| match (&asm.links()[l].body, site) {
            (LinkBody::Rigid(b), Site::Body) => {
                mass += b.mass;
                volume += b.volume;
                mm += g.transform_point(&b.com) * b.mass;
                mv += g.transform_point(&b.buoyancy_center) * b.volume;
            }
            (LinkBody::Soft(r), Site::Point(i)) => {
                let w = asm.plan(l).expect("plan").points[i].weight;
                let a = r.area() * w;
                mass += r.density * a;
                volume += a;
                mm += g.position * (r.density * a);
                mv += g.position * a;
            }
            _ => {}
        });
        let cg = mm / mass;
        let cb = if volume > T::zero() { mv / volume } else { cg };
        Self {
            displaced_volume: volume,
            center_of_buoyancy_offset: cb - cg,
            net_mass: mass - params.water_density * volume,
            center_of_gravity: cg,
            center_of_buoyancy: cb,
            mass,
        }
    }
}

/// `Σ Jᵀ·M_a·J` over rod quadrature points and the root body.
pub fn added_mass_contribution<T: Real>(asm: &Assembly<T>, state: &GeneralizedState<T>, params: &HydroParams<T>) -> DMatrix<T> {
    let n = asm.dof();
    let mut m = DMatrix::zeros(n, n);
    sweep(asm, state.q.as_slice(), SparseJacobian::<T>::default(), |l, site, _, j| {
        let ma = match (&asm.links()[l].body, site) {
            (LinkBody::Soft(r), Site::Point(i)) => params.rod_added_mass(r) * asm.plan(l).expect("plan").points[i].weight,
            (LinkBody::Rigid(_), Site::Body) if l == 0 => params.shell_added_mass,
            _ => return,
        };
        accumulate_quadratic(&mut m, j, &ma);
    });
    m
}

/// `m += Jᵀ·A·J` over the nonzero columns of `J`.
pub fn accumulate_quadratic<T: Real>(m: &mut DMatrix<T>, j: &SparseJacobian<T>, a: &Matrix6<T>) {
    let ac: Vec<Vector6<T>> = j.columns.iter().map(|c| a * c).collect();
    for (x, (dx, cx)) in j.dofs.iter().zip(&j.columns).enumerate() {
        for (dy, acy) in j.dofs.iter().zip(&ac).skip(x) {
            let v = cx.dot(acy);
            m[(*dx, *dy)] += v;
            if dx != dy {
                m[(*dy, *dx)] += v;
            }
        }
    }
}

/// Linearized rod drag per unit length: `δf ≈ −C·δη` in the section frame.
pub fn rod_drag_tangent<T: Real>(twist: &Twist<T>, params: &HydroParams<T>, rod: &RodSpec<T>) -> Matrix6<T> {
    let half = T::of(0.5);
    let rho = params.water_density;
    let d = T::of(2.0) * rod.radius;
    let v = twist.linear;
    let kn = half * rho * params.rod_cd_normal * d;
    let kt = half * rho * params.rod_cd_tangent * T::of(std::f64::consts::PI) * d;
    let mut c = Matrix6::zeros();
    c[(3, 3)] = T::of(2.0) * kt * v.x.abs();
    let nn = (v.y * v.y + v.z * v.z).sqrt();
    if nn > T::zero() {
        c[(4, 4)] = kn * (nn + v.y * v.y / nn);
        c[(5, 5)] = kn * (nn + v.z * v.z / nn);
        c[(4, 5)] = kn * v.y * v.z / nn;
        c[(5, 4)] = c[(4, 5)];
    }
    c
}

/// Linearized shell drag, diagonal part only.
pub fn shell_drag_tangent<T: Real>(twist: &Twist<T>, params: &HydroParams<T>) -> Matrix6<T> {
    let eta = twist.to_vector();
    let d = Matrix6::from_diagonal(&Vector6::from_fn(|i, _| T::of(2.0) * params.shell_drag[(i, i)].abs() * eta[i].abs()));
    d + params.shell_linear_drag
}
